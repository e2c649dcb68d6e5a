#pragma once

#include "metasub/task.hpp"

namespace metasub {

/// Sums of sinusoids y = sum_k A_k sin(k x) with A_k ~ U[amp_lo, amp_hi).
struct SineFamilySpec {
  int n_sines = 2;
  double amp_lo = 0.1;
  double amp_hi = 5.0;
  double x_lo = -5.0;
  double x_hi = 5.0;
  int support_size = 10;
  int query_size = 50;

  void validate() const;
};

/// N-way K-shot classification around prototypes on a centered grid.
struct PrototypeFamilySpec {
  int n_classes = 3;
  int shots = 5;
  int input_dim = 4;
  int grid_points_per_axis = 4;
  double grid_spacing = 2.0;
  double noise_std = 0.25;
  int query_per_class = 15;
  /// Upper bound on grid_points_per_axis^input_dim.
  std::size_t max_grid_points = 1u << 20;

  void validate() const;
  std::size_t grid_size() const;
};

/// Evaluates the sine sum for every row of x (n x 1).
Matrix sine_targets(const Eigen::Ref<const Vector>& amplitudes, const Eigen::Ref<const Matrix>& x);

Task sample_sine_task(const SineFamilySpec& spec, SeededRng& rng);

/// All grid points, lexicographic with the first axis varying slowest.
Matrix grid_prototypes(const PrototypeFamilySpec& spec);

Task sample_prototype_task(const PrototypeFamilySpec& spec, SeededRng& rng);

/// Same as above with the grid precomputed (avoids rebuilding it per task).
Task sample_prototype_task(const PrototypeFamilySpec& spec, const Matrix& grid, SeededRng& rng);

}  // namespace metasub
