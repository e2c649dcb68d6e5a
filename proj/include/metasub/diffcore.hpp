#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metasub/numerics.hpp"

namespace metasub {

enum class Activation { kRelu, kIdentity };

struct LayerSpec {
  Eigen::Index in_dim = 1;
  Eigen::Index out_dim = 1;
  Activation activation = Activation::kIdentity;

  Eigen::Index param_count() const { return (in_dim + 1) * out_dim; }
  bool operator==(const LayerSpec&) const = default;
};

/// Fully connected network with hidden ReLU layers and an identity output.
/// `widths` = {input, hidden..., output}.
std::vector<LayerSpec> mlp_layers(const std::vector<Eigen::Index>& widths);

/// Network parameters as one flat vector.
///
/// Flattening is layer-major. Within layer l the weight matrix W_l
/// (out_dim x in_dim) comes first in row-major order, followed by the bias
/// b_l (out_dim). Entry W_l(r, c) therefore lives at
/// `offset(l) + r * in_dim + c` and b_l(r) at `offset(l) + out_dim * in_dim + r`.
struct MlpParams {
  std::vector<LayerSpec> layers;
  Vector theta;

  MlpParams() = default;
  MlpParams(std::vector<LayerSpec> layer_specs, Vector values);

  /// Zero-initialized parameters for the given layers.
  static MlpParams zeros(std::vector<LayerSpec> layer_specs);
  /// Weights ~ U(-sqrt(6/(in+out)), +sqrt(6/(in+out))), biases zero.
  static MlpParams glorot(std::vector<LayerSpec> layer_specs, SeededRng& rng);

  Eigen::Index size() const { return theta.size(); }
  Eigen::Index offset(std::size_t layer) const;
  Eigen::Index layer_size(std::size_t layer) const { return layers[layer].param_count(); }

  Eigen::Map<const RowMajorMatrix> weights(std::size_t layer) const;
  Eigen::Map<const Vector> bias(std::size_t layer) const;

  /// (layer, row, col) of a flat index; col == in_dim denotes the bias.
  struct Location {
    std::size_t layer;
    Eigen::Index row;
    Eigen::Index col;
  };
  Location locate(Eigen::Index index) const;
  Eigen::Index index_of(std::size_t layer, Eigen::Index row, Eigen::Index col) const;
};

/// Total parameter count for a layer list; validates layer invariants.
Eigen::Index parameter_count(const std::vector<LayerSpec>& layers);

enum class LossKind { kMse, kSoftmaxCrossEntropy };

/// Inputs are one example per row. Regression batches carry a target matrix,
/// classification batches carry integer labels in [0, classes).
struct Batch {
  Matrix inputs;
  Matrix targets;
  std::vector<int> labels;

  static Batch regression(Matrix inputs, Matrix targets);
  static Batch classification(Matrix inputs, std::vector<int> labels);

  Eigen::Index size() const { return inputs.rows(); }
  bool is_classification() const { return targets.size() == 0; }
};

Matrix forward(const MlpParams& params, const Eigen::Ref<const Matrix>& inputs);

double loss(const MlpParams& params, const Batch& batch, LossKind kind);

Vector grad(const MlpParams& params, const Batch& batch, LossKind kind);

struct LossGrad {
  double loss = 0.0;
  Vector grad;
  /// Fraction of correctly classified rows; empty for regression.
  std::optional<double> accuracy;
};

/// Loss and gradient from one shared forward pass.
LossGrad loss_and_grad(const MlpParams& params, const Batch& batch, LossKind kind);

/// Hessian-vector product H(params) * v of the batch loss, by tangent
/// propagation through the backward pass. ReLU contributes no curvature.
Vector hvp(const MlpParams& params, const Batch& batch, LossKind kind,
           const Eigen::Ref<const Vector>& v);

/// Fraction of rows whose arg-max logit equals the label.
double accuracy(const MlpParams& params, const Batch& batch);

}  // namespace metasub
