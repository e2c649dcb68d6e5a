#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "metasub/errors.hpp"

namespace metasub {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)
// ---------------------------------------------------------------------------

template <typename Scalar>
struct SymEig {
  using VectorType = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  VectorType eigenvalues;   // descending
  MatrixType eigenvectors;  // column i pairs with eigenvalues(i)
  int sweeps = 0;
};

struct JacobiOptions {
  int max_sweeps = 100;
  /// Stop once the off-diagonal Frobenius norm drops below
  /// `off_tolerance * ||m||_F` (absolute when m is zero).
  double off_tolerance = 1e-12;
};

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
/// The input is symmetrized as (m + m^T)/2 before rotating.
template <typename Derived>
SymEig<typename Derived::Scalar> sym_eig(const Eigen::MatrixBase<Derived>& m,
                                         const JacobiOptions& opts = {}) {
  using Scalar = typename Derived::Scalar;
  using MatrixType = typename SymEig<Scalar>::MatrixType;
  if (m.rows() != m.cols()) {
    throw DimensionError("sym_eig: matrix is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", expected square");
  }
  const Eigen::Index n = m.rows();
  MatrixType a = (m + m.transpose()) / Scalar(2);
  MatrixType v = MatrixType::Identity(n, n);

  const Scalar scale = a.norm();
  const Scalar target = scale > Scalar(0) ? Scalar(opts.off_tolerance) * scale
                                          : Scalar(opts.off_tolerance);
  auto off_norm = [&]() {
    Scalar s(0);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < j; ++i) s += a(i, j) * a(i, j);
    return std::sqrt(Scalar(2) * s);
  };

  int sweep = 0;
  Scalar off = off_norm();
  while (off > target) {
    if (sweep >= opts.max_sweeps) {
      throw ConvergenceError("sym_eig: no convergence after " + std::to_string(opts.max_sweeps) +
                             " sweeps (off-diagonal norm " + std::to_string(double(off)) + ")");
    }
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar apq = a(p, q);
        if (apq == Scalar(0)) continue;
        const Scalar app = a(p, p);
        const Scalar aqq = a(q, q);
        // Skip rotations that cannot change the diagonal in working precision.
        if (std::abs(apq) < std::numeric_limits<Scalar>::epsilon() * Scalar(1e-3) *
                                std::sqrt(std::abs(app * aqq))) {
          a(p, q) = a(q, p) = Scalar(0);
          continue;
        }
        const Scalar theta = (aqq - app) / (Scalar(2) * apq);
        const Scalar t = (theta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                         (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar s = t * c;

        // a <- J^T a J with J the (p, q) plane rotation [c s; -s c].
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar akp = a(k, p);
          const Scalar akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar apk = a(p, k);
          const Scalar aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = Scalar(0);
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar vkp = v(k, p);
          const Scalar vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    ++sweep;
    off = off_norm();
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  SymEig<Scalar> out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.eigenvalues(i) = a(order[i], order[i]);
    out.eigenvectors.col(i) = v.col(order[i]);
  }
  out.sweeps = sweep;
  return out;
}

// ---------------------------------------------------------------------------
// Graph shortest paths
// ---------------------------------------------------------------------------

/// Undirected graph with nonnegative edge weights, stored as adjacency lists.
class WeightedGraph {
 public:
  struct Edge {
    std::size_t to;
    double weight;
  };

  explicit WeightedGraph(std::size_t n) : adjacency_(n) {}

  std::size_t size() const { return adjacency_.size(); }

  /// Adds u--v. A repeated edge keeps the smaller weight.
  void add_edge(std::size_t u, std::size_t v, double weight);

  const std::vector<Edge>& neighbors(std::size_t u) const { return adjacency_[u]; }

  /// Connected components, each sorted ascending, ordered by smallest member.
  std::vector<std::vector<std::size_t>> components() const;

 private:
  std::vector<std::vector<Edge>> adjacency_;
};

enum class Unreachable { kThrow, kInfinity };

/// Geodesic distance matrix via one Dijkstra run per source.
/// With Unreachable::kThrow a disconnected graph raises DisconnectedGraphError;
/// with kInfinity unreachable pairs hold +infinity.
Matrix all_pairs_shortest_paths(const WeightedGraph& graph,
                                Unreachable policy = Unreachable::kThrow);

/// Single-source Dijkstra distances (infinity when unreachable).
Vector shortest_paths_from(const WeightedGraph& graph, std::size_t source);

// ---------------------------------------------------------------------------
// Seeded randomness
// ---------------------------------------------------------------------------

class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi);
  /// Gaussian with the given mean and standard deviation (std > 0).
  double normal(double mean, double std);
  /// Uniform integer on [0, n).
  std::size_t index(std::size_t n);
  /// Raw 64-bit draw, used to derive child seeds.
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> standard_normal_{0.0, 1.0};
};

inline double rng_uniform(SeededRng& rng, double lo, double hi) { return rng.uniform(lo, hi); }
inline double rng_normal(SeededRng& rng, double mean, double std) { return rng.normal(mean, std); }

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

/// Worker cap from METASUB_THREADS (default: hardware concurrency, at least 1).
unsigned worker_threads();

/// Runs body(i) for i in [0, n). Each index is visited exactly once; callers
/// write results to disjoint slots.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  unsigned threads = worker_threads());

}  // namespace metasub
