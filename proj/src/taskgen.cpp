#include "metasub/taskgen.hpp"

#include <numeric>

namespace metasub {

void SineFamilySpec::validate() const {
  if (n_sines < 1) throw ValidationError("n_sines", "must be >= 1");
  if (!(amp_lo < amp_hi)) throw ValidationError("amp_lo", "must be below amp_hi");
  if (!(x_lo < x_hi)) throw ValidationError("x_lo", "must be below x_hi");
  if (support_size < 1) throw ValidationError("support_size", "must be >= 1");
  if (query_size < 1) throw ValidationError("query_size", "must be >= 1");
}

std::size_t PrototypeFamilySpec::grid_size() const {
  std::size_t total = 1;
  for (int d = 0; d < input_dim; ++d) {
    total *= static_cast<std::size_t>(grid_points_per_axis);
    if (total > max_grid_points) {
      throw SizeError("prototype grid exceeds " + std::to_string(max_grid_points) + " points");
    }
  }
  return total;
}

void PrototypeFamilySpec::validate() const {
  if (n_classes < 1) throw ValidationError("n_classes", "must be >= 1");
  if (shots < 1) throw ValidationError("shots", "must be >= 1");
  if (input_dim < 1) throw ValidationError("input_dim", "must be >= 1");
  if (grid_points_per_axis < 1) throw ValidationError("grid_points_per_axis", "must be >= 1");
  if (!(grid_spacing > 0.0)) throw ValidationError("grid_spacing", "must be > 0");
  if (!(noise_std > 0.0)) throw ValidationError("noise_std", "must be > 0");
  if (query_per_class < 1) throw ValidationError("query_per_class", "must be >= 1");
  if (grid_size() < static_cast<std::size_t>(n_classes)) {
    throw ValidationError("n_classes", "exceeds the number of grid prototypes (" +
                                           std::to_string(grid_size()) + ")");
  }
}

Matrix sine_targets(const Eigen::Ref<const Vector>& amplitudes, const Eigen::Ref<const Matrix>& x) {
  Matrix y = Matrix::Zero(x.rows(), 1);
  for (Eigen::Index k = 0; k < amplitudes.size(); ++k) {
    y.col(0).array() += amplitudes(k) * (static_cast<double>(k + 1) * x.col(0).array()).sin();
  }
  return y;
}

Task sample_sine_task(const SineFamilySpec& spec, SeededRng& rng) {
  spec.validate();
  Vector amps(spec.n_sines);
  for (auto& a : amps) a = rng.uniform(spec.amp_lo, spec.amp_hi);
  auto draw = [&](int n) {
    Matrix x(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = rng.uniform(spec.x_lo, spec.x_hi);
    return x;
  };
  Matrix xs = draw(spec.support_size);
  Matrix xq = draw(spec.query_size);
  Task t;
  t.loss = LossKind::kMse;
  t.support = Batch::regression(xs, sine_targets(amps, xs));
  t.query = Batch::regression(xq, sine_targets(amps, xq));
  t.descriptor = TaskDescriptor::amplitudes(amps);
  return t;
}

Matrix grid_prototypes(const PrototypeFamilySpec& spec) {
  if (spec.input_dim < 1 || spec.grid_points_per_axis < 1) {
    throw ArgumentError("grid_prototypes: dimensions must be >= 1");
  }
  const std::size_t count = spec.grid_size();
  const int m = spec.grid_points_per_axis;
  const double half = 0.5 * static_cast<double>(m - 1) * spec.grid_spacing;
  Matrix grid(static_cast<Eigen::Index>(count), spec.input_dim);
  for (std::size_t p = 0; p < count; ++p) {
    std::size_t rest = p;
    for (int d = spec.input_dim - 1; d >= 0; --d) {
      const auto digit = static_cast<double>(rest % static_cast<std::size_t>(m));
      rest /= static_cast<std::size_t>(m);
      grid(static_cast<Eigen::Index>(p), d) = digit * spec.grid_spacing - half;
    }
  }
  return grid;
}

Task sample_prototype_task(const PrototypeFamilySpec& spec, SeededRng& rng) {
  return sample_prototype_task(spec, grid_prototypes(spec), rng);
}

Task sample_prototype_task(const PrototypeFamilySpec& spec, const Matrix& grid, SeededRng& rng) {
  spec.validate();
  const auto available = static_cast<std::size_t>(grid.rows());
  const auto n = static_cast<std::size_t>(spec.n_classes);
  if (n > available) throw ArgumentError("more classes than grid prototypes");

  // Partial Fisher-Yates: the first n slots are a uniform draw without replacement.
  std::vector<std::size_t> idx(available);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.index(available - i);
    std::swap(idx[i], idx[j]);
  }
  Matrix protos(spec.n_classes, spec.input_dim);
  for (std::size_t c = 0; c < n; ++c) protos.row(static_cast<Eigen::Index>(c)) = grid.row(static_cast<Eigen::Index>(idx[c]));

  auto draw = [&](int per_class) {
    Matrix x(spec.n_classes * per_class, spec.input_dim);
    std::vector<int> y(static_cast<std::size_t>(spec.n_classes * per_class));
    Eigen::Index row = 0;
    for (int c = 0; c < spec.n_classes; ++c) {
      for (int i = 0; i < per_class; ++i, ++row) {
        for (int d = 0; d < spec.input_dim; ++d) x(row, d) = rng.normal(protos(c, d), spec.noise_std);
        y[static_cast<std::size_t>(row)] = c;
      }
    }
    return Batch::classification(std::move(x), std::move(y));
  };

  Task t;
  t.loss = LossKind::kSoftmaxCrossEntropy;
  t.support = draw(spec.shots);
  t.query = draw(spec.query_per_class);
  t.descriptor = TaskDescriptor::prototypes(std::move(protos));
  return t;
}

}  // namespace metasub
