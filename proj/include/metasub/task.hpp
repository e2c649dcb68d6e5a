#pragma once

#include "metasub/diffcore.hpp"

namespace metasub {

/// Ground-truth parameters of a task, when the family has them.
/// Sine tasks: 1 x N amplitudes. Prototype tasks: N x D class centers, row c
/// being the prototype of class c.
struct TaskDescriptor {
  enum class Kind { kNone, kAmplitudes, kPrototypes };
  Kind kind = Kind::kNone;
  Matrix values;

  static TaskDescriptor amplitudes(const Eigen::Ref<const Vector>& a) {
    return {Kind::kAmplitudes, a.transpose()};
  }
  static TaskDescriptor prototypes(Matrix p) { return {Kind::kPrototypes, std::move(p)}; }
};

struct Task {
  Batch support;
  Batch query;
  LossKind loss = LossKind::kMse;
  TaskDescriptor descriptor;
};

}  // namespace metasub
