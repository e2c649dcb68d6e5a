#include "metasub/reconstruct.hpp"

#include <numeric>

namespace metasub {

namespace {

struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - s.mean(j)).square().mean();
      s.scale(j) = var > 1e-30 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
  Matrix invert(const Matrix& x) const {
    return (x.array().rowwise() * scale.transpose().array()).matrix().rowwise() + mean.transpose();
  }
};

Matrix gather_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

MlpParams fit_full_batch(const std::vector<LayerSpec>& layers, const Batch& batch, LossKind kind,
                         const ProbeConfig& config) {
  SeededRng rng(config.seed);
  MlpParams model = MlpParams::glorot(layers, rng);
  AdamState opt(model.size());
  const AdamOptions adam{config.lr};
  for (int e = 0; e < config.epochs; ++e) {
    const Vector g = grad(model, batch, kind);
    opt.apply(model.theta, g, adam);
  }
  return model;
}

void check_split(const EmbeddedTaskSet& set) {
  if (static_cast<Eigen::Index>(set.train.size()) != set.count()) {
    throw ArgumentError("train mask does not match the number of embedded tasks");
  }
  if (set.rows(true).empty() || set.rows(false).empty()) {
    throw ArgumentError("degenerate split: train and test must both be nonempty");
  }
}

void check_probe(const ProbeConfig& c) {
  if (c.hidden < 1) throw ValidationError("probe.hidden", "must be >= 1");
  if (!(c.lr > 0.0)) throw ValidationError("probe.lr", "must be > 0");
  if (c.epochs < 0) throw ValidationError("probe.epochs", "must be >= 0");
}

}  // namespace

std::vector<Eigen::Index> EmbeddedTaskSet::rows(bool in_train) const {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i] == in_train) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

EmbeddedTaskSet embed(const AdaptedParamsMatrix& points, const PcaResult& pca, Eigen::Index k,
                      double train_fraction) {
  if (k < 1) throw ArgumentError("embedding dimension must be >= 1");
  if (k > pca.available_components()) {
    throw ArgumentError("embedding dimension " + std::to_string(k) + " exceeds the " +
                        std::to_string(pca.available_components()) + " available components");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError("train_fraction must lie in (0, 1)");
  }
  EmbeddedTaskSet set;
  set.z = pca_project(pca, points.rows, k);
  set.descriptors = points.descriptors;
  const auto m = static_cast<std::size_t>(points.count());
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(m)));
  set.train.assign(m, false);
  for (std::size_t i = 0; i < std::min(n_train, m); ++i) set.train[i] = true;
  return set;
}

ProbeResult fit_amplitude_regressor(const EmbeddedTaskSet& set, const ProbeConfig& config) {
  check_probe(config);
  check_split(set);
  if (static_cast<Eigen::Index>(set.descriptors.size()) != set.count()) {
    throw ArgumentError("descriptors are not aligned with embedded rows");
  }
  const Eigen::Index n_amp = set.descriptors.front().values.size();
  Matrix amps(set.count(), n_amp);
  for (Eigen::Index i = 0; i < set.count(); ++i) {
    const auto& d = set.descriptors[static_cast<std::size_t>(i)];
    if (d.kind != TaskDescriptor::Kind::kAmplitudes || d.values.size() != n_amp) {
      throw ArgumentError("amplitude regression needs equal-length amplitude descriptors");
    }
    amps.row(i) = Eigen::Map<const Vector>(d.values.data(), n_amp).transpose();
  }
  const auto train_rows = set.rows(true);
  const auto test_rows = set.rows(false);
  const Matrix z_train = gather_rows(set.z, train_rows);
  const Matrix z_test = gather_rows(set.z, test_rows);
  const Matrix y_train = gather_rows(amps, train_rows);
  const Matrix y_test = gather_rows(amps, test_rows);

  const Standardizer zs = Standardizer::fit(z_train);
  const Standardizer ys = Standardizer::fit(y_train);
  const Batch batch = Batch::regression(zs.apply(z_train), ys.apply(y_train));
  const auto layers = mlp_layers({set.z.cols(), config.hidden, n_amp});

  ProbeResult r;
  r.model = fit_full_batch(layers, batch, LossKind::kMse, config);
  const Matrix pred = ys.invert(forward(r.model, zs.apply(z_test)));
  r.metric = (pred - y_test).squaredNorm() / static_cast<double>(y_test.size());
  r.baseline = (y_test.rowwise() - ys.mean.transpose()).squaredNorm() / static_cast<double>(y_test.size());
  return r;
}

ProbeResult fit_conditioned_classifier(const EmbeddedTaskSet& set, const ProbeConfig& config) {
  check_probe(config);
  check_split(set);
  if (static_cast<Eigen::Index>(set.task_points.size()) != set.count()) {
    throw ArgumentError("conditioned classifier needs labeled points for every task");
  }
  int classes = 0;
  Eigen::Index in_dim = -1;
  for (const auto& b : set.task_points) {
    if (!b.is_classification()) throw ArgumentError("task points must carry class labels");
    if (in_dim >= 0 && b.inputs.cols() != in_dim) throw DimensionError("task points differ in width");
    in_dim = b.inputs.cols();
    for (int y : b.labels) classes = std::max(classes, y + 1);
  }
  const Eigen::Index k = set.z.cols();
  const auto train_rows = set.rows(true);
  const Standardizer zs = Standardizer::fit(gather_rows(set.z, train_rows));
  const Matrix z_std = zs.apply(set.z);

  auto assemble = [&](const std::vector<Eigen::Index>& rows) {
    Eigen::Index total = 0;
    for (auto r : rows) total += set.task_points[static_cast<std::size_t>(r)].size();
    Matrix x(total, in_dim + k);
    std::vector<int> y;
    y.reserve(static_cast<std::size_t>(total));
    Eigen::Index at = 0;
    for (auto r : rows) {
      const Batch& b = set.task_points[static_cast<std::size_t>(r)];
      x.block(at, 0, b.size(), in_dim) = b.inputs;
      x.block(at, in_dim, b.size(), k) = z_std.row(r).replicate(b.size(), 1);
      y.insert(y.end(), b.labels.begin(), b.labels.end());
      at += b.size();
    }
    return Batch::classification(std::move(x), std::move(y));
  };

  const Batch train_batch = assemble(train_rows);
  const Batch test_batch = assemble(set.rows(false));
  const auto layers = mlp_layers({in_dim + k, config.hidden, classes});
  ProbeResult r;
  r.model = fit_full_batch(layers, train_batch, LossKind::kSoftmaxCrossEntropy, config);
  r.metric = accuracy(r.model, test_batch);
  r.baseline = 1.0 / static_cast<double>(classes);
  return r;
}

EmbeddedTaskSet shuffle_embeddings(const EmbeddedTaskSet& set, SeededRng& rng) {
  EmbeddedTaskSet out = set;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(set.count()));
  std::iota(perm.begin(), perm.end(), Eigen::Index(0));
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  for (std::size_t i = 0; i < perm.size(); ++i) out.z.row(static_cast<Eigen::Index>(i)) = set.z.row(perm[i]);
  return out;
}

}  // namespace metasub
