#pragma once

#include "metasub/numerics.hpp"

namespace metasub {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments for one flat parameter block.
struct AdamState {
  Vector m;
  Vector v;
  long step = 0;

  explicit AdamState(Eigen::Index n = 0) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}

  /// x <- x - lr * mhat / (sqrt(vhat) + eps), bias-corrected.
  void apply(Eigen::Ref<Vector> x, const Eigen::Ref<const Vector>& g, const AdamOptions& opts) {
    if (x.size() != m.size() || g.size() != m.size()) {
      throw DimensionError("adam: parameter/gradient size mismatch");
    }
    ++step;
    m = opts.beta1 * m + (1.0 - opts.beta1) * g;
    v = opts.beta2 * v + (1.0 - opts.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(step));
    x.array() -= opts.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opts.eps);
  }
};

}  // namespace metasub
