#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metasub/diffcore.hpp"

namespace metasub {

struct PcaResult {
  Vector eigenvalues;                 // sample covariance spectrum, descending, clamped at 0
  Vector explained_variance_ratios;   // eigenvalues / total variance
  Vector cumulative;                  // running sums of the ratios
  Matrix components;                  // one orthonormal principal axis per row
  Vector mean;                        // column means of the input
  double total_variance = 0.0;

  Eigen::Index available_components() const { return components.rows(); }
};

/// Principal axes of the rows of `points`. Uses the D x D covariance when
/// D <= M and the M x M Gram matrix otherwise; both give the same nonzero
/// spectrum. At most `max_components` axes are kept (0 keeps every axis with
/// a nonzero eigenvalue).
PcaResult pca(const Eigen::Ref<const Matrix>& points, Eigen::Index max_components = 0);

/// (points - mean) * components^T, first k columns.
Matrix pca_project(const PcaResult& pca, const Eigen::Ref<const Matrix>& points, Eigen::Index k);

/// z * components[:k] + mean.
Matrix pca_back_project(const PcaResult& pca, const Eigen::Ref<const Matrix>& z);

/// Symmetric k-NN graph (edge when either endpoint lists the other) with
/// Euclidean weights. Ties break toward the lower row index.
WeightedGraph knn_graph(const Eigen::Ref<const Matrix>& points, Eigen::Index n_neighbors);

/// Double-centered geodesic kernel -1/2 H D^2 H and its eigendecomposition,
/// computed once and shared by every embedding dimension.
struct GeodesicKernel {
  Matrix kernel;
  SymEig<double> eig;
  double kernel_norm = 0.0;
};

GeodesicKernel geodesic_kernel(const Eigen::Ref<const Matrix>& points, Eigen::Index n_neighbors);

struct IsomapResult {
  Eigen::Index k = 0;
  Matrix embedding;            // M x k, columns by decreasing eigenvalue
  double reconstruction_error = 0.0;
};

/// Embedding from a precomputed kernel. Negative eigenvalues are clamped to
/// zero; their columns stay zero.
IsomapResult isomap_embed(const GeodesicKernel& kernel, Eigen::Index k);

IsomapResult isomap(const Eigen::Ref<const Matrix>& points, Eigen::Index n_neighbors, Eigen::Index k);

enum class SpectrumMethod { kPca, kIsomap };

std::string to_string(SpectrumMethod m);
SpectrumMethod spectrum_method_from_string(const std::string& s);

struct DimEstimate {
  Eigen::Index dim = 0;
  bool saturated = false;
};

/// PCA: smallest k whose cumulative explained variance reaches `threshold`.
/// Isomap: smallest k whose normalized error is at or below `threshold`.
/// Falls back to the largest scanned k, flagged as saturated.
DimEstimate estimate_intrinsic_dim(const std::vector<Eigen::Index>& ks,
                                   const std::vector<double>& normalized_scores,
                                   SpectrumMethod method, double threshold);

struct SpectrumReport {
  SpectrumMethod method = SpectrumMethod::kPca;
  std::vector<Eigen::Index> ks;
  std::vector<double> raw_scores;
  std::vector<double> normalized_scores;
  Eigen::Index estimated_dim = 0;
  bool saturated = false;
  double threshold = 0.0;
  Eigen::Index n_neighbors = 0;
};

inline double default_threshold(SpectrumMethod m) { return m == SpectrumMethod::kPca ? 0.95 : 0.10; }

SpectrumReport spectrum(const Eigen::Ref<const Matrix>& points, SpectrumMethod method,
                        const std::vector<Eigen::Index>& ks, Eigen::Index n_neighbors,
                        double threshold);

struct ParamDiff {
  Vector per_param;                 // mean |theta_i,j - theta_i',j| over unordered row pairs
  std::vector<double> per_layer;    // mean of per_param within each layer
};

ParamDiff mean_abs_param_diff(const Eigen::Ref<const Matrix>& points,
                              const std::vector<LayerSpec>& layers);

}  // namespace metasub
