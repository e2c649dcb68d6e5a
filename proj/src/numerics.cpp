#include "metasub/numerics.hpp"

#include <cstdlib>
#include <queue>
#include <sstream>
#include <thread>

namespace metasub {

void WeightedGraph::add_edge(std::size_t u, std::size_t v, double weight) {
  if (u >= size() || v >= size()) {
    throw ArgumentError("add_edge: node index out of range");
  }
  if (!(weight >= 0.0)) {
    throw ArgumentError("add_edge: edge weights must be nonnegative");
  }
  if (u == v) return;
  auto upsert = [&](std::size_t from, std::size_t to) {
    for (auto& e : adjacency_[from]) {
      if (e.to == to) {
        e.weight = std::min(e.weight, weight);
        return;
      }
    }
    adjacency_[from].push_back({to, weight});
  };
  upsert(u, v);
  upsert(v, u);
}

std::vector<std::vector<std::size_t>> WeightedGraph::components() const {
  std::vector<std::vector<std::size_t>> out;
  std::vector<bool> seen(size(), false);
  for (std::size_t start = 0; start < size(); ++start) {
    if (seen[start]) continue;
    std::vector<std::size_t> comp;
    std::vector<std::size_t> stack{start};
    seen[start] = true;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      comp.push_back(u);
      for (const auto& e : adjacency_[u]) {
        if (!seen[e.to]) {
          seen[e.to] = true;
          stack.push_back(e.to);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  return out;
}

Vector shortest_paths_from(const WeightedGraph& graph, std::size_t source) {
  const std::size_t n = graph.size();
  Vector dist = Vector::Constant(static_cast<Eigen::Index>(n),
                                 std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist(static_cast<Eigen::Index>(source)) = 0.0;
  heap.push({0.0, source});
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (d > dist(static_cast<Eigen::Index>(u))) continue;
    for (const auto& e : graph.neighbors(u)) {
      const double nd = d + e.weight;
      auto& cur = dist(static_cast<Eigen::Index>(e.to));
      if (nd < cur) {
        cur = nd;
        heap.push({nd, e.to});
      }
    }
  }
  return dist;
}

Matrix all_pairs_shortest_paths(const WeightedGraph& graph, Unreachable policy) {
  const std::size_t n = graph.size();
  if (policy == Unreachable::kThrow) {
    auto comps = graph.components();
    if (comps.size() > 1) {
      std::ostringstream msg;
      msg << "graph is disconnected into " << comps.size() << " components (sizes:";
      for (const auto& c : comps) msg << ' ' << c.size();
      msg << "; first members:";
      for (const auto& c : comps) msg << ' ' << c.front();
      msg << ")";
      throw DisconnectedGraphError(msg.str(), std::move(comps));
    }
  }
  const auto ni = static_cast<Eigen::Index>(n);
  Matrix out(ni, ni);
  parallel_for(n, [&](std::size_t s) {
    out.col(static_cast<Eigen::Index>(s)) = shortest_paths_from(graph, s);
  });
  // Dijkstra is exact up to summation order; enforce exact symmetry.
  for (Eigen::Index j = 0; j < ni; ++j) {
    out(j, j) = 0.0;
    for (Eigen::Index i = 0; i < j; ++i) {
      const double d = std::min(out(i, j), out(j, i));
      out(i, j) = out(j, i) = d;
    }
  }
  return out;
}

double SeededRng::uniform(double lo, double hi) {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw ArgumentError("rng_uniform: need finite lo < hi");
  }
  // 53 random mantissa bits give u in [0, 1).
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  const double x = lo + (hi - lo) * u;
  return x < hi ? x : std::nextafter(hi, lo);
}

double SeededRng::normal(double mean, double std) {
  if (!(std > 0.0) || !std::isfinite(std) || !std::isfinite(mean)) {
    throw ArgumentError("rng_normal: need finite mean and std > 0");
  }
  return mean + std * standard_normal_(engine_);
}

std::size_t SeededRng::index(std::size_t n) {
  if (n == 0) throw ArgumentError("rng index: empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

unsigned worker_threads() {
  if (const char* env = std::getenv("METASUB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  unsigned threads) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace metasub
