#include "metasub/diffcore.hpp"

#include <sstream>

namespace metasub {

namespace {

using RowMap = Eigen::Map<RowMajorMatrix>;

// Pre-activations z_l and activations a_l (a_0 = inputs) of one forward pass.
struct Trace {
  std::vector<Matrix> pre;
  std::vector<Matrix> act;
};

void check_inputs(const MlpParams& params, Eigen::Index cols) {
  if (params.layers.empty()) throw DimensionError("network has no layers");
  if (cols != params.layers.front().in_dim) {
    std::ostringstream msg;
    msg << "input has " << cols << " columns, network expects " << params.layers.front().in_dim;
    throw DimensionError(msg.str());
  }
}

void check_batch(const MlpParams& params, const Batch& batch, LossKind kind) {
  check_inputs(params, batch.inputs.cols());
  const Eigen::Index n = batch.size();
  const Eigen::Index out = params.layers.back().out_dim;
  if (n < 1) throw DimensionError("batch is empty");
  if (kind == LossKind::kMse) {
    if (batch.targets.rows() != n || batch.targets.cols() != out) {
      throw DimensionError("mse loss needs an n x " + std::to_string(out) + " target matrix");
    }
  } else {
    if (static_cast<Eigen::Index>(batch.labels.size()) != n) {
      throw DimensionError("cross-entropy loss needs one label per row");
    }
    for (int y : batch.labels) {
      if (y < 0 || y >= out) throw DimensionError("label out of range [0, " + std::to_string(out) + ")");
    }
  }
}

[[noreturn]] void throw_non_finite(const MlpParams& params, const char* where) {
  std::size_t index = NumericError::npos;
  for (Eigen::Index i = 0; i < params.theta.size(); ++i) {
    if (!std::isfinite(params.theta(i))) {
      index = static_cast<std::size_t>(i);
      break;
    }
  }
  std::ostringstream msg;
  msg << "non-finite value in " << where;
  if (index != NumericError::npos) msg << " (parameter " << index << " is " << params.theta(static_cast<Eigen::Index>(index)) << ")";
  throw NumericError(msg.str(), index);
}

Trace run_forward(const MlpParams& params, const Eigen::Ref<const Matrix>& inputs) {
  Trace t;
  const std::size_t L = params.layers.size();
  t.pre.reserve(L);
  t.act.reserve(L + 1);
  t.act.emplace_back(inputs);
  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = t.act[l] * params.weights(l).transpose();
    z.rowwise() += params.bias(l).transpose();
    if (params.layers[l].activation == Activation::kRelu) {
      t.act.emplace_back(z.cwiseMax(0.0));
    } else {
      t.act.emplace_back(z);
    }
    t.pre.push_back(std::move(z));
  }
  if (!t.act.back().allFinite()) throw_non_finite(params, "forward pass");
  return t;
}

// Loss value and dL/dz at the output.
double output_loss(const Matrix& out, const Batch& batch, LossKind kind, Matrix& dout,
                   Matrix* probs) {
  const Eigen::Index n = out.rows();
  if (kind == LossKind::kMse) {
    const double denom = static_cast<double>(out.size());
    Matrix diff = out - batch.targets;
    dout = (2.0 / denom) * diff;
    return diff.squaredNorm() / denom;
  }
  Matrix p(out.rows(), out.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = out.row(i).maxCoeff();
    auto shifted = (out.row(i).array() - mx).exp();
    const double s = shifted.sum();
    p.row(i) = shifted / s;
    total += (mx + std::log(s)) - out(i, batch.labels[static_cast<std::size_t>(i)]);
  }
  dout = p;
  for (Eigen::Index i = 0; i < n; ++i) dout(i, batch.labels[static_cast<std::size_t>(i)]) -= 1.0;
  dout /= static_cast<double>(n);
  if (probs) *probs = std::move(p);
  return total / static_cast<double>(n);
}

Matrix relu_mask(const Matrix& pre, const Matrix& g) {
  return (pre.array() > 0.0).select(g, 0.0);
}

void write_layer_grad(Vector& out, const MlpParams& params, std::size_t l, const Matrix& g_pre,
                      const Matrix& a_prev) {
  const auto& spec = params.layers[l];
  const Eigen::Index off = params.offset(l);
  RowMap w(out.data() + off, spec.out_dim, spec.in_dim);
  w.noalias() = g_pre.transpose() * a_prev;
  out.segment(off + spec.out_dim * spec.in_dim, spec.out_dim) = g_pre.colwise().sum().transpose();
}

double classification_accuracy(const Matrix& logits, const std::vector<int>& labels) {
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

}  // namespace

std::vector<LayerSpec> mlp_layers(const std::vector<Eigen::Index>& widths) {
  if (widths.size() < 2) throw ArgumentError("mlp_layers: need at least input and output widths");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers.push_back({widths[i], widths[i + 1], last ? Activation::kIdentity : Activation::kRelu});
  }
  parameter_count(layers);
  return layers;
}

Eigen::Index parameter_count(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) throw DimensionError("network has no layers");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& s = layers[l];
    if (s.in_dim < 1 || s.out_dim < 1) throw DimensionError("layer dimensions must be >= 1");
    if (l > 0 && s.in_dim != layers[l - 1].out_dim) {
      throw DimensionError("layer " + std::to_string(l) + " input does not match previous output");
    }
    total += s.param_count();
  }
  if (layers.back().activation != Activation::kIdentity) {
    throw DimensionError("final layer must use the identity activation");
  }
  return total;
}

MlpParams::MlpParams(std::vector<LayerSpec> layer_specs, Vector values)
    : layers(std::move(layer_specs)), theta(std::move(values)) {
  const Eigen::Index expected = parameter_count(layers);
  if (theta.size() != expected) {
    throw DimensionError("theta has " + std::to_string(theta.size()) + " entries, layers need " +
                         std::to_string(expected));
  }
}

MlpParams MlpParams::zeros(std::vector<LayerSpec> layer_specs) {
  const Eigen::Index n = parameter_count(layer_specs);
  return MlpParams(std::move(layer_specs), Vector::Zero(n));
}

MlpParams MlpParams::glorot(std::vector<LayerSpec> layer_specs, SeededRng& rng) {
  MlpParams p = zeros(std::move(layer_specs));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& s = p.layers[l];
    const double bound = std::sqrt(6.0 / static_cast<double>(s.in_dim + s.out_dim));
    const Eigen::Index off = p.offset(l);
    for (Eigen::Index i = 0; i < s.in_dim * s.out_dim; ++i) {
      p.theta(off + i) = rng.uniform(-bound, bound);
    }
  }
  return p;
}

Eigen::Index MlpParams::offset(std::size_t layer) const {
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < layer; ++l) off += layers[l].param_count();
  return off;
}

Eigen::Map<const RowMajorMatrix> MlpParams::weights(std::size_t layer) const {
  const auto& s = layers[layer];
  return {theta.data() + offset(layer), s.out_dim, s.in_dim};
}

Eigen::Map<const Vector> MlpParams::bias(std::size_t layer) const {
  const auto& s = layers[layer];
  return {theta.data() + offset(layer) + s.out_dim * s.in_dim, s.out_dim};
}

MlpParams::Location MlpParams::locate(Eigen::Index index) const {
  if (index < 0 || index >= theta.size()) throw ArgumentError("parameter index out of range");
  Eigen::Index rest = index;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& s = layers[l];
    if (rest < s.param_count()) {
      if (rest < s.out_dim * s.in_dim) return {l, rest / s.in_dim, rest % s.in_dim};
      return {l, rest - s.out_dim * s.in_dim, s.in_dim};
    }
    rest -= s.param_count();
  }
  throw ArgumentError("parameter index out of range");
}

Eigen::Index MlpParams::index_of(std::size_t layer, Eigen::Index row, Eigen::Index col) const {
  const auto& s = layers.at(layer);
  if (row < 0 || row >= s.out_dim || col < 0 || col > s.in_dim) {
    throw ArgumentError("index_of: (row, col) outside layer");
  }
  if (col == s.in_dim) return offset(layer) + s.out_dim * s.in_dim + row;
  return offset(layer) + row * s.in_dim + col;
}

Batch Batch::regression(Matrix inputs, Matrix targets) {
  if (inputs.rows() != targets.rows()) throw DimensionError("inputs and targets differ in rows");
  Batch b;
  b.inputs = std::move(inputs);
  b.targets = std::move(targets);
  return b;
}

Batch Batch::classification(Matrix inputs, std::vector<int> labels) {
  if (inputs.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw DimensionError("inputs and labels differ in length");
  }
  for (int y : labels) {
    if (y < 0) throw DimensionError("labels must be nonnegative");
  }
  Batch b;
  b.inputs = std::move(inputs);
  b.labels = std::move(labels);
  return b;
}

Matrix forward(const MlpParams& params, const Eigen::Ref<const Matrix>& inputs) {
  check_inputs(params, inputs.cols());
  return std::move(run_forward(params, inputs).act.back());
}

double loss(const MlpParams& params, const Batch& batch, LossKind kind) {
  check_batch(params, batch, kind);
  const Trace t = run_forward(params, batch.inputs);
  Matrix dout;
  const double value = output_loss(t.act.back(), batch, kind, dout, nullptr);
  if (!std::isfinite(value)) throw_non_finite(params, "loss");
  return value;
}

LossGrad loss_and_grad(const MlpParams& params, const Batch& batch, LossKind kind) {
  check_batch(params, batch, kind);
  const Trace t = run_forward(params, batch.inputs);
  LossGrad out;
  Matrix g;
  out.loss = output_loss(t.act.back(), batch, kind, g, nullptr);
  if (!std::isfinite(out.loss)) throw_non_finite(params, "loss");
  if (kind == LossKind::kSoftmaxCrossEntropy) {
    out.accuracy = classification_accuracy(t.act.back(), batch.labels);
  }
  out.grad.resize(params.size());
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    write_layer_grad(out.grad, params, l, g, t.act[l]);
    if (l > 0) {
      Matrix back = g * params.weights(l);
      g = params.layers[l - 1].activation == Activation::kRelu ? relu_mask(t.pre[l - 1], back)
                                                                : back;
    }
  }
  return out;
}

Vector grad(const MlpParams& params, const Batch& batch, LossKind kind) {
  return loss_and_grad(params, batch, kind).grad;
}

Vector hvp(const MlpParams& params, const Batch& batch, LossKind kind,
           const Eigen::Ref<const Vector>& v) {
  if (v.size() != params.size()) {
    throw DimensionError("hvp: direction has " + std::to_string(v.size()) + " entries, expected " +
                         std::to_string(params.size()));
  }
  check_batch(params, batch, kind);
  const Trace t = run_forward(params, batch.inputs);
  const std::size_t L = params.layers.size();
  const Eigen::Index n = batch.size();

  // Direction split per layer, same layout as theta.
  MlpParams dir(params.layers, v);

  // Forward tangents R{a_l}; R{a_0} = 0.
  std::vector<Matrix> r_act(L + 1);
  std::vector<Matrix> r_pre(L);
  r_act[0] = Matrix::Zero(n, params.layers.front().in_dim);
  for (std::size_t l = 0; l < L; ++l) {
    Matrix rz = r_act[l] * params.weights(l).transpose() + t.act[l] * dir.weights(l).transpose();
    rz.rowwise() += dir.bias(l).transpose();
    r_act[l + 1] = params.layers[l].activation == Activation::kRelu ? relu_mask(t.pre[l], rz) : rz;
    r_pre[l] = std::move(rz);
  }

  // Output gradient and its tangent.
  Matrix g;
  Matrix probs;
  output_loss(t.act.back(), batch, kind, g, &probs);
  Matrix rg;
  const Matrix& rout = r_act[L];
  if (kind == LossKind::kMse) {
    rg = (2.0 / static_cast<double>(rout.size())) * rout;
  } else {
    // d softmax = diag(p) - p p^T, per row.
    Vector dots = (probs.array() * rout.array()).rowwise().sum();
    rg = probs.array() * (rout.colwise() - dots).array();
    rg /= static_cast<double>(n);
  }

  Vector out(params.size());
  for (std::size_t l = L; l-- > 0;) {
    const auto& spec = params.layers[l];
    const Eigen::Index off = params.offset(l);
    RowMap w(out.data() + off, spec.out_dim, spec.in_dim);
    w.noalias() = rg.transpose() * t.act[l];
    w.noalias() += g.transpose() * r_act[l];
    out.segment(off + spec.out_dim * spec.in_dim, spec.out_dim) = rg.colwise().sum().transpose();
    if (l > 0) {
      Matrix back = g * params.weights(l);
      Matrix rback = rg * params.weights(l) + g * dir.weights(l);
      if (params.layers[l - 1].activation == Activation::kRelu) {
        g = relu_mask(t.pre[l - 1], back);
        rg = relu_mask(t.pre[l - 1], rback);
      } else {
        g = std::move(back);
        rg = std::move(rback);
      }
    }
  }
  return out;
}

double accuracy(const MlpParams& params, const Batch& batch) {
  check_batch(params, batch, LossKind::kSoftmaxCrossEntropy);
  return classification_accuracy(forward(params, batch.inputs), batch.labels);
}

}  // namespace metasub
