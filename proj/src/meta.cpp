#include "metasub/meta.hpp"

#include <sstream>

namespace metasub {

namespace {

// Blockwise G_l * g (transpose = false) or G_l^T * g (transpose = true).
Vector precondition(const MetaState& state, const Vector& g, bool transpose) {
  if (!state.has_curvature()) return g;
  Vector out(g.size());
  for (std::size_t l = 0; l < state.mc_blocks.size(); ++l) {
    const Eigen::Index off = state.params.offset(l);
    const Eigen::Index n = state.params.layer_size(l);
    const Matrix& G = state.mc_blocks[l];
    if (transpose) {
      out.segment(off, n).noalias() = G.transpose() * g.segment(off, n);
    } else {
      out.segment(off, n).noalias() = G * g.segment(off, n);
    }
  }
  return out;
}

void check_compatible(const MetaState& state, const MetaMethod& method) {
  method.validate();
  const bool wants_mc = method.kind == MetaMethod::Kind::kMetaCurvature;
  if (wants_mc != state.has_curvature()) {
    throw ArgumentError(wants_mc ? "meta-curvature needs curvature blocks in the meta state"
                                 : "maml state must not carry curvature blocks");
  }
}

// Blockwise G_l * cols (transpose = false) or G_l^T * cols for a stack of
// per-task vectors, one GEMM per layer.
Matrix precondition_all(const MetaState& state, const Matrix& cols, bool transpose) {
  if (!state.has_curvature()) return cols;
  Matrix out(cols.rows(), cols.cols());
  for (std::size_t l = 0; l < state.mc_blocks.size(); ++l) {
    const Eigen::Index off = state.params.offset(l);
    const Eigen::Index n = state.params.layer_size(l);
    const Matrix& G = state.mc_blocks[l];
    if (transpose) {
      out.middleRows(off, n).noalias() = G.transpose() * cols.middleRows(off, n);
    } else {
      out.middleRows(off, n).noalias() = G * cols.middleRows(off, n);
    }
  }
  return out;
}

struct BatchTerms {
  Matrix g_support;  // P x T
  Matrix g_query;    // P x T
  Matrix dtheta;     // P x T
  std::vector<double> query_loss;
  std::vector<std::optional<double>> query_accuracy;
};

BatchTerms batch_terms(const MetaState& state, const std::vector<Task>& tasks,
                       const MetaMethod& method, unsigned threads) {
  const Eigen::Index P = state.params.size();
  const auto T = static_cast<Eigen::Index>(tasks.size());
  const double alpha = method.inner_lr;
  BatchTerms b;
  b.g_support.resize(P, T);
  b.g_query.resize(P, T);
  b.dtheta.resize(P, T);
  b.query_loss.resize(tasks.size());
  b.query_accuracy.resize(tasks.size());

  parallel_for(
      tasks.size(),
      [&](std::size_t i) {
        b.g_support.col(static_cast<Eigen::Index>(i)) =
            grad(state.params, tasks[i].support, tasks[i].loss);
      },
      threads);
  const Matrix step = precondition_all(state, b.g_support, false);
  parallel_for(
      tasks.size(),
      [&](std::size_t i) {
        const auto c = static_cast<Eigen::Index>(i);
        MlpParams adapted(state.params.layers, state.params.theta - alpha * step.col(c));
        LossGrad q = loss_and_grad(adapted, tasks[i].query, tasks[i].loss);
        b.query_loss[i] = q.loss;
        b.query_accuracy[i] = q.accuracy;
        b.g_query.col(c) = q.grad;
      },
      threads);
  if (alpha == 0.0) {
    b.dtheta = b.g_query;
    return b;
  }
  const Matrix u = precondition_all(state, b.g_query, true);
  parallel_for(
      tasks.size(),
      [&](std::size_t i) {
        const auto c = static_cast<Eigen::Index>(i);
        b.dtheta.col(c) =
            b.g_query.col(c) - alpha * hvp(state.params, tasks[i].support, tasks[i].loss, u.col(c));
      },
      threads);
  return b;
}

}  // namespace

void MetaMethod::validate() const {
  if (!(inner_lr >= 0.0) || !std::isfinite(inner_lr)) {
    throw ValidationError("inner_lr", "must be a finite nonnegative number");
  }
}

MetaState MetaState::create(MlpParams params, MetaMethod::Kind kind) {
  MetaState s;
  s.theta_opt = AdamState(params.size());
  if (kind == MetaMethod::Kind::kMetaCurvature) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      const Eigen::Index n = params.layer_size(l);
      s.mc_blocks.push_back(Matrix::Identity(n, n));
      s.block_opt.emplace_back(n * n);
    }
  }
  s.params = std::move(params);
  return s;
}

MlpParams adapt(const MetaState& state, const Task& task, const MetaMethod& method) {
  check_compatible(state, method);
  const Vector g = grad(state.params, task.support, task.loss);
  return MlpParams(state.params.layers,
                   state.params.theta - method.inner_lr * precondition(state, g, false));
}

MetaGradient meta_gradient(const MetaState& state, const std::vector<Task>& tasks,
                           const MetaMethod& method, unsigned threads) {
  if (tasks.empty()) throw ArgumentError("meta_gradient: task list is empty");
  check_compatible(state, method);

  const BatchTerms terms = batch_terms(state, tasks, method, threads);

  const auto T = static_cast<double>(tasks.size());
  MetaGradient out;
  out.dtheta = Vector::Zero(state.params.size());
  double loss_sum = 0.0;
  double acc_sum = 0.0;
  bool has_acc = true;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out.dtheta += terms.dtheta.col(static_cast<Eigen::Index>(i));
    loss_sum += terms.query_loss[i];
    if (terms.query_accuracy[i]) {
      acc_sum += *terms.query_accuracy[i];
    } else {
      has_acc = false;
    }
  }
  out.dtheta /= T;
  out.mean_query_loss = loss_sum / T;
  if (has_acc) out.mean_query_accuracy = acc_sum / T;

  if (state.has_curvature()) {
    const double alpha = method.inner_lr;
    for (std::size_t l = 0; l < state.mc_blocks.size(); ++l) {
      const Eigen::Index off = state.params.offset(l);
      const Eigen::Index n = state.params.layer_size(l);
      Matrix dG(n, n);
      dG.noalias() = terms.g_query.middleRows(off, n) * terms.g_support.middleRows(off, n).transpose();
      dG *= -alpha / T;
      out.dblocks.push_back(std::move(dG));
    }
  }
  return out;
}

double meta_objective(const MetaState& state, const std::vector<Task>& tasks,
                      const MetaMethod& method) {
  if (tasks.empty()) throw ArgumentError("meta_objective: task list is empty");
  double total = 0.0;
  for (const auto& t : tasks) total += loss(adapt(state, t, method), t.query, t.loss);
  return total / static_cast<double>(tasks.size());
}

void TrainOptions::validate() const {
  method.validate();
  if (!(method.inner_lr > 0.0)) throw ValidationError("inner_lr", "must be > 0");
  if (!(outer.lr > 0.0)) throw ValidationError("outer_lr", "must be > 0");
  if (!(curvature.lr > 0.0)) throw ValidationError("curvature_lr", "must be > 0");
  if (epochs < 0) throw ValidationError("epochs", "must be >= 0");
  if (batches_per_epoch < 1) throw ValidationError("batches_per_epoch", "must be >= 1");
  if (meta_batch_size < 1) throw ValidationError("meta_batch_size", "must be >= 1");
}

TrainResult train(MetaState initial, const TrainOptions& options, const TaskSampler& sampler,
                  SeededRng& rng) {
  options.validate();
  check_compatible(initial, options.method);
  TrainResult result{std::move(initial), {}};
  MetaState& state = result.state;

  for (int e = 0; e < options.epochs; ++e) {
    const int epoch = state.epoch + 1;
    double loss_sum = 0.0;
    double acc_sum = 0.0;
    bool has_acc = true;
    for (int b = 0; b < options.batches_per_epoch; ++b) {
      std::vector<Task> tasks;
      tasks.reserve(static_cast<std::size_t>(options.meta_batch_size));
      for (int i = 0; i < options.meta_batch_size; ++i) tasks.push_back(sampler(rng));

      MetaGradient mg;
      try {
        mg = meta_gradient(state, tasks, options.method, options.threads);
      } catch (const NumericError& err) {
        throw DivergedError("training diverged in epoch " + std::to_string(epoch) + ": " +
                                err.what(),
                            epoch);
      }
      if (!std::isfinite(mg.mean_query_loss) || !mg.dtheta.allFinite()) {
        throw DivergedError("training diverged in epoch " + std::to_string(epoch) +
                                ": mean query loss is not finite",
                            epoch);
      }
      loss_sum += mg.mean_query_loss;
      if (mg.mean_query_accuracy) {
        acc_sum += *mg.mean_query_accuracy;
      } else {
        has_acc = false;
      }

      state.theta_opt.apply(state.params.theta, mg.dtheta, options.outer);
      for (std::size_t l = 0; l < state.mc_blocks.size(); ++l) {
        Matrix& G = state.mc_blocks[l];
        state.block_opt[l].apply(Eigen::Map<Vector>(G.data(), G.size()),
                                 Eigen::Map<const Vector>(mg.dblocks[l].data(), G.size()),
                                 options.curvature);
      }
    }
    HistoryRow row;
    row.epoch = epoch;
    row.mean_query_loss = loss_sum / options.batches_per_epoch;
    if (has_acc) row.mean_query_accuracy = acc_sum / options.batches_per_epoch;
    if (!std::isfinite(row.mean_query_loss)) {
      throw DivergedError("training diverged in epoch " + std::to_string(epoch), epoch);
    }
    result.history.push_back(row);
    state.epoch = epoch;
  }
  return result;
}

AdaptedParamsMatrix collect_adapted(const MetaState& state, const std::vector<Task>& tasks,
                                    const MetaMethod& method) {
  if (tasks.empty()) throw ArgumentError("collect_adapted: task list is empty");
  AdaptedParamsMatrix out;
  out.layers = state.params.layers;
  out.rows.resize(static_cast<Eigen::Index>(tasks.size()), state.params.size());
  out.descriptors.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out.rows.row(static_cast<Eigen::Index>(i)) = adapt(state, tasks[i], method).theta.transpose();
    out.descriptors.push_back(tasks[i].descriptor);
  }
  return out;
}

}  // namespace metasub
