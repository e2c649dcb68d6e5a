#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "metasub/optim.hpp"
#include "metasub/task.hpp"

namespace metasub {

struct MetaMethod {
  enum class Kind { kMaml, kMetaCurvature };
  Kind kind = Kind::kMaml;
  double inner_lr = 0.01;

  void validate() const;
};

/// Meta-parameters plus the Meta-Curvature preconditioner. `mc_blocks[l]`
/// is a dense square matrix over layer l's flattened parameters; it is
/// empty for MAML.
struct MetaState {
  MlpParams params;
  std::vector<Matrix> mc_blocks;
  AdamState theta_opt;
  std::vector<AdamState> block_opt;
  int epoch = 0;

  static MetaState create(MlpParams params, MetaMethod::Kind kind);

  bool has_curvature() const { return !mc_blocks.empty(); }
};

/// theta' = theta - alpha * G * grad_S  (G = I for MAML), one step.
MlpParams adapt(const MetaState& state, const Task& task, const MetaMethod& method);

struct MetaGradient {
  Vector dtheta;
  std::vector<Matrix> dblocks;  // empty for MAML
  double mean_query_loss = 0.0;
  std::optional<double> mean_query_accuracy;
};

/// Exact gradient of the mean post-adaptation query loss with respect to
/// theta (and the curvature blocks for Meta-Curvature). Tasks are reduced
/// in index order.
MetaGradient meta_gradient(const MetaState& state, const std::vector<Task>& tasks,
                           const MetaMethod& method, unsigned threads = 1);

/// Mean post-adaptation query loss; the scalar that meta_gradient differentiates.
double meta_objective(const MetaState& state, const std::vector<Task>& tasks,
                      const MetaMethod& method);

struct TrainOptions {
  MetaMethod method;
  AdamOptions outer;
  /// Adam settings for the Meta-Curvature blocks.
  AdamOptions curvature{1e-4};
  int epochs = 100;
  int batches_per_epoch = 100;
  int meta_batch_size = 32;
  unsigned threads = 1;

  void validate() const;
};

struct HistoryRow {
  int epoch = 0;
  double mean_query_loss = 0.0;
  std::optional<double> mean_query_accuracy;
};

struct TrainResult {
  MetaState state;
  std::vector<HistoryRow> history;
};

using TaskSampler = std::function<Task(SeededRng&)>;

/// Outer loop: epochs x batches_per_epoch Adam steps on fresh meta-batches.
/// Throws DivergedError when the mean query loss stops being finite.
TrainResult train(MetaState initial, const TrainOptions& options, const TaskSampler& sampler,
                  SeededRng& rng);

struct AdaptedParamsMatrix {
  Matrix rows;  // M x D, row i = adapted parameters of task i
  std::vector<LayerSpec> layers;
  std::vector<TaskDescriptor> descriptors;

  Eigen::Index count() const { return rows.rows(); }
  Eigen::Index dim() const { return rows.cols(); }
};

AdaptedParamsMatrix collect_adapted(const MetaState& state, const std::vector<Task>& tasks,
                                    const MetaMethod& method);

}  // namespace metasub
