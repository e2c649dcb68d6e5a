#include "metasub/subspace.hpp"

#include <sstream>

namespace metasub {

namespace {

// Relative eigenvalue floor below which a principal axis is treated as null.
constexpr double kNullEigenvalue = 1e-12;

void check_ascending(const std::vector<Eigen::Index>& ks) {
  if (ks.empty()) throw ArgumentError("k range is empty");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1) throw ArgumentError("k values must be >= 1");
    if (i > 0 && ks[i] <= ks[i - 1]) throw ArgumentError("k range must be strictly ascending");
  }
}

Matrix pairwise_distances(const Eigen::Ref<const Matrix>& points) {
  const Eigen::Index m = points.rows();
  Matrix d = Matrix::Zero(m, m);
  // Column-major copy of the transposed cloud keeps each point contiguous.
  const Matrix pts = points.transpose();
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      d(i, j) = d(j, i) = (pts.col(i) - pts.col(j)).norm();
    }
  }
  return d;
}

}  // namespace

PcaResult pca(const Eigen::Ref<const Matrix>& points, Eigen::Index max_components) {
  const Eigen::Index m = points.rows();
  const Eigen::Index d = points.cols();
  if (m < 2) throw ArgumentError("pca needs at least 2 rows, got " + std::to_string(m));
  if (d < 1) throw ArgumentError("pca needs at least one column");
  if (max_components < 0) throw ArgumentError("max_components must be >= 0");

  PcaResult out;
  out.mean = points.colwise().mean().transpose();
  const Matrix centered = points.rowwise() - out.mean.transpose();
  const double scale = std::max(1.0, points.cwiseAbs().maxCoeff());
  if (centered.cwiseAbs().maxCoeff() <= 1e-13 * scale) {
    throw DegenerateDataError("pca: point cloud has zero total variance (all rows equal)");
  }
  const double denom = static_cast<double>(m - 1);

  SymEig<double> eig;
  const bool gram = d > m;
  if (gram) {
    eig = sym_eig(Matrix(centered * centered.transpose() / denom));
  } else {
    eig = sym_eig(Matrix(centered.transpose() * centered / denom));
  }
  out.eigenvalues = eig.eigenvalues.cwiseMax(0.0);
  out.total_variance = out.eigenvalues.sum();
  if (!(out.total_variance > 0.0)) {
    throw DegenerateDataError("pca: point cloud has zero total variance");
  }
  out.explained_variance_ratios = out.eigenvalues / out.total_variance;
  out.cumulative.resize(out.explained_variance_ratios.size());
  double run = 0.0;
  for (Eigen::Index i = 0; i < out.cumulative.size(); ++i) {
    run += out.explained_variance_ratios(i);
    out.cumulative(i) = run;
  }

  const double floor = kNullEigenvalue * out.eigenvalues(0);
  Eigen::Index keep = 0;
  while (keep < out.eigenvalues.size() && out.eigenvalues(keep) > floor) ++keep;
  if (max_components > 0) keep = std::min(keep, max_components);

  out.components.resize(keep, d);
  for (Eigen::Index i = 0; i < keep; ++i) {
    if (gram) {
      Vector axis = centered.transpose() * eig.eigenvectors.col(i);
      out.components.row(i) = axis.normalized().transpose();
    } else {
      out.components.row(i) = eig.eigenvectors.col(i).transpose();
    }
  }
  return out;
}

Matrix pca_project(const PcaResult& p, const Eigen::Ref<const Matrix>& points, Eigen::Index k) {
  if (k < 1 || k > p.available_components()) {
    throw ArgumentError("projection dimension " + std::to_string(k) + " outside [1, " +
                        std::to_string(p.available_components()) + "]");
  }
  if (points.cols() != p.mean.size()) throw DimensionError("pca_project: column count mismatch");
  return (points.rowwise() - p.mean.transpose()) * p.components.topRows(k).transpose();
}

Matrix pca_back_project(const PcaResult& p, const Eigen::Ref<const Matrix>& z) {
  if (z.cols() < 1 || z.cols() > p.available_components()) {
    throw ArgumentError("pca_back_project: embedding width outside available components");
  }
  Matrix out = z * p.components.topRows(z.cols());
  out.rowwise() += p.mean.transpose();
  return out;
}

WeightedGraph knn_graph(const Eigen::Ref<const Matrix>& points, Eigen::Index n_neighbors) {
  const Eigen::Index m = points.rows();
  if (n_neighbors < 1) throw ArgumentError("n_neighbors must be >= 1");
  if (m <= n_neighbors) {
    throw ArgumentError("isomap needs more points (" + std::to_string(m) + ") than neighbors (" +
                        std::to_string(n_neighbors) + ")");
  }
  const Matrix d = pairwise_distances(points);
  WeightedGraph g(static_cast<std::size_t>(m));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    std::swap(order[static_cast<std::size_t>(i)], order.back());
    order.pop_back();
    auto closer = [&](Eigen::Index a, Eigen::Index b) {
      return d(i, a) < d(i, b) || (d(i, a) == d(i, b) && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + n_neighbors, order.end(), closer);
    for (Eigen::Index r = 0; r < n_neighbors; ++r) {
      const Eigen::Index j = order[static_cast<std::size_t>(r)];
      g.add_edge(static_cast<std::size_t>(i), static_cast<std::size_t>(j), d(i, j));
    }
    order.resize(static_cast<std::size_t>(m));
  }
  return g;
}

GeodesicKernel geodesic_kernel(const Eigen::Ref<const Matrix>& points, Eigen::Index n_neighbors) {
  const WeightedGraph graph = knn_graph(points, n_neighbors);
  Matrix geo;
  try {
    geo = all_pairs_shortest_paths(graph);
  } catch (const DisconnectedGraphError& err) {
    throw DisconnectedGraphError(std::string("isomap: k-NN graph with n_neighbors=") +
                                     std::to_string(n_neighbors) + " is disconnected; " +
                                     err.what() + ". Increase n_neighbors.",
                                 err.components());
  }
  Matrix sq = geo.cwiseProduct(geo);
  const Vector row_mean = sq.rowwise().mean();
  const Vector col_mean = sq.colwise().mean().transpose();
  const double grand = sq.mean();
  GeodesicKernel out;
  out.kernel = sq;
  out.kernel.colwise() -= row_mean;
  out.kernel.rowwise() -= col_mean.transpose();
  out.kernel.array() += grand;
  out.kernel *= -0.5;
  out.kernel_norm = out.kernel.norm();
  if (!(out.kernel_norm > 0.0)) {
    throw DegenerateDataError("isomap: all geodesic distances are zero (all rows equal)");
  }
  out.eig = sym_eig(out.kernel);
  return out;
}

IsomapResult isomap_embed(const GeodesicKernel& kernel, Eigen::Index k) {
  const Eigen::Index m = kernel.kernel.rows();
  if (k < 1 || k > m) throw ArgumentError("embedding dimension must lie in [1, M]");
  IsomapResult out;
  out.k = k;
  out.embedding = Matrix::Zero(m, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double lambda = kernel.eig.eigenvalues(i);
    if (lambda <= 0.0) break;
    out.embedding.col(i) = kernel.eig.eigenvectors.col(i) * std::sqrt(lambda);
  }
  Matrix residual = kernel.kernel;
  residual.noalias() -= out.embedding * out.embedding.transpose();
  out.reconstruction_error = residual.norm() / kernel.kernel_norm;
  return out;
}

IsomapResult isomap(const Eigen::Ref<const Matrix>& points, Eigen::Index n_neighbors,
                    Eigen::Index k) {
  if (k < 1) throw ArgumentError("embedding dimension must be >= 1");
  return isomap_embed(geodesic_kernel(points, n_neighbors), k);
}

std::string to_string(SpectrumMethod m) { return m == SpectrumMethod::kPca ? "pca" : "isomap"; }

SpectrumMethod spectrum_method_from_string(const std::string& s) {
  if (s == "pca") return SpectrumMethod::kPca;
  if (s == "isomap") return SpectrumMethod::kIsomap;
  throw ArgumentError("unknown analysis method '" + s + "' (expected pca or isomap)");
}

DimEstimate estimate_intrinsic_dim(const std::vector<Eigen::Index>& ks,
                                   const std::vector<double>& normalized_scores,
                                   SpectrumMethod method, double threshold) {
  if (ks.empty() || ks.size() != normalized_scores.size()) {
    throw ArgumentError("estimate_intrinsic_dim: need one score per scanned k");
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double s = normalized_scores[i];
    const bool reached = method == SpectrumMethod::kPca ? s >= threshold : s <= threshold;
    if (reached) return {ks[i], false};
  }
  return {ks.back(), true};
}

SpectrumReport spectrum(const Eigen::Ref<const Matrix>& points, SpectrumMethod method,
                        const std::vector<Eigen::Index>& ks, Eigen::Index n_neighbors,
                        double threshold) {
  check_ascending(ks);
  SpectrumReport r;
  r.method = method;
  r.ks = ks;
  r.threshold = threshold;
  if (method == SpectrumMethod::kPca) {
    const PcaResult p = pca(points);
    for (Eigen::Index k : ks) {
      const double cum = k <= p.cumulative.size() ? std::min(1.0, p.cumulative(k - 1)) : 1.0;
      r.raw_scores.push_back(1.0 - cum);
      r.normalized_scores.push_back(cum);
    }
  } else {
    r.n_neighbors = n_neighbors;
    const GeodesicKernel kernel = geodesic_kernel(points, n_neighbors);
    for (Eigen::Index k : ks) {
      r.raw_scores.push_back(isomap_embed(kernel, std::min(k, kernel.kernel.rows())).reconstruction_error);
    }
    const double first = r.raw_scores.front();
    for (std::size_t i = 0; i < r.raw_scores.size(); ++i) {
      if (i == 0) {
        r.normalized_scores.push_back(1.0);
      } else {
        r.normalized_scores.push_back(first > 0.0 ? r.raw_scores[i] / first : 0.0);
      }
    }
  }
  const DimEstimate est = estimate_intrinsic_dim(r.ks, r.normalized_scores, method, threshold);
  r.estimated_dim = est.dim;
  r.saturated = est.saturated;
  return r;
}

ParamDiff mean_abs_param_diff(const Eigen::Ref<const Matrix>& points,
                              const std::vector<LayerSpec>& layers) {
  const Eigen::Index m = points.rows();
  if (m < 2) throw ArgumentError("mean_abs_param_diff needs at least 2 rows");
  if (!layers.empty() && parameter_count(layers) != points.cols()) {
    throw DimensionError("mean_abs_param_diff: layer metadata does not match column count");
  }
  ParamDiff out;
  out.per_param.resize(points.cols());
  const double pairs = 0.5 * static_cast<double>(m) * static_cast<double>(m - 1);
  std::vector<double> col(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    for (Eigen::Index i = 0; i < m; ++i) col[static_cast<std::size_t>(i)] = points(i, j);
    std::sort(col.begin(), col.end());
    // sum_{i<i'} |x_i - x_i'| over sorted values = sum_r x_(r) * (2r - m + 1)
    double total = 0.0;
    for (Eigen::Index r = 0; r < m; ++r) {
      total += col[static_cast<std::size_t>(r)] * static_cast<double>(2 * r - m + 1);
    }
    out.per_param(j) = total / pairs;
  }
  Eigen::Index off = 0;
  for (const auto& spec : layers) {
    out.per_layer.push_back(out.per_param.segment(off, spec.param_count()).mean());
    off += spec.param_count();
  }
  return out;
}

}  // namespace metasub
