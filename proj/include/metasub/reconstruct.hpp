#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "metasub/meta.hpp"
#include "metasub/subspace.hpp"

namespace metasub {

/// PCA embeddings of adapted parameters with their ground truth and a
/// task-level train/test split.
struct EmbeddedTaskSet {
  Matrix z;                                // M x k
  std::vector<TaskDescriptor> descriptors;
  std::vector<Batch> task_points;          // labeled points per task (classification probe)
  std::vector<bool> train;                 // true = train row, false = test row

  Eigen::Index count() const { return z.rows(); }
  std::vector<Eigen::Index> rows(bool in_train) const;
};

/// z = (points - mean) * components^T truncated to k columns. The first
/// round(train_fraction * M) rows form the train split.
EmbeddedTaskSet embed(const AdaptedParamsMatrix& points, const PcaResult& pca, Eigen::Index k,
                      double train_fraction = 0.8);

struct ProbeConfig {
  Eigen::Index hidden = 64;
  double lr = 1e-3;
  int epochs = 500;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  MlpParams model;
  double metric = 0.0;    // test MSE (regression) or test accuracy (classification)
  double baseline = 0.0;  // constant predictor MSE, or chance accuracy 1/N
};

/// Regresses amplitude vectors from z with a one-hidden-layer MLP trained
/// full-batch with Adam. Inputs and targets are standardized with train
/// statistics; the reported MSE is in original amplitude units.
ProbeResult fit_amplitude_regressor(const EmbeddedTaskSet& set, const ProbeConfig& config);

/// Classifies points of held-out tasks from the concatenation (x, z_task).
ProbeResult fit_conditioned_classifier(const EmbeddedTaskSet& set, const ProbeConfig& config);

/// Copy of `set` whose z rows are permuted (destroys the task/embedding link).
EmbeddedTaskSet shuffle_embeddings(const EmbeddedTaskSet& set, SeededRng& rng);

}  // namespace metasub
