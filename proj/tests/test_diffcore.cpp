#include <doctest.h>

#include "metasub/diffcore.hpp"
#include "oracles.hpp"

using namespace metasub;

namespace {

MlpParams random_net(const std::vector<Eigen::Index>& widths, SeededRng& rng, double scale = 0.8) {
  MlpParams p(mlp_layers(widths), Vector::Zero(parameter_count(mlp_layers(widths))));
  for (Eigen::Index i = 0; i < p.size(); ++i) p.theta(i) = rng.normal(0.0, scale);
  return p;
}

Batch random_regression(Eigen::Index n, Eigen::Index din, Eigen::Index dout, SeededRng& rng) {
  return Batch::regression(oracle::random_matrix(n, din, rng), oracle::random_matrix(n, dout, rng));
}

Batch random_classification(Eigen::Index n, Eigen::Index din, int classes, SeededRng& rng) {
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.index(classes)));
  return Batch::classification(oracle::random_matrix(n, din, rng), labels);
}

}  // namespace

TEST_CASE("layers and flattening") {
  const auto layers = mlp_layers({3, 4, 2});
  REQUIRE(layers.size() == 2);
  CHECK(layers[0].activation == Activation::kRelu);
  CHECK(layers[1].activation == Activation::kIdentity);
  CHECK(parameter_count(layers) == 4 * 4 + 2 * 5);

  MlpParams p = MlpParams::zeros(layers);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.theta(i) = static_cast<double>(i);
  CHECK(p.offset(1) == 16);
  CHECK(p.weights(0)(1, 2) == 1 * 3 + 2);
  CHECK(p.bias(0)(3) == 12 + 3);
  CHECK(p.weights(1)(1, 0) == 16 + 4);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const auto loc = p.locate(i);
    CHECK(p.index_of(loc.layer, loc.row, loc.col) == i);
  }
  const auto bias_loc = p.locate(p.offset(1) + 8);
  CHECK(bias_loc.layer == 1);
  CHECK(bias_loc.col == 4);
  CHECK_THROWS_AS(p.locate(p.size()), ArgumentError);
}

TEST_CASE("layer validation") {
  CHECK_THROWS_AS(mlp_layers({3}), ArgumentError);
  CHECK_THROWS_AS(mlp_layers({3, 0, 1}), DimensionError);
  std::vector<LayerSpec> bad = {{2, 3, Activation::kRelu}, {4, 1, Activation::kIdentity}};
  CHECK_THROWS_AS(parameter_count(bad), DimensionError);
  std::vector<LayerSpec> relu_out = {{2, 1, Activation::kRelu}};
  CHECK_THROWS_AS(parameter_count(relu_out), DimensionError);
  CHECK_THROWS_AS(MlpParams(mlp_layers({2, 1}), Vector::Zero(2)), DimensionError);
}

TEST_CASE("glorot init") {
  SeededRng rng(4);
  const MlpParams p = MlpParams::glorot(mlp_layers({10, 30, 2}), rng);
  const double bound0 = std::sqrt(6.0 / 40.0);
  CHECK(p.weights(0).cwiseAbs().maxCoeff() <= bound0);
  CHECK(p.bias(0).isZero());
  CHECK(p.bias(1).isZero());
  CHECK(p.weights(0).cwiseAbs().maxCoeff() > 0.5 * bound0);
}

TEST_CASE("forward: zero network and identity layer") {
  SeededRng rng(1);
  const Matrix x = oracle::random_matrix(6, 3, rng);
  CHECK(forward(MlpParams::zeros(mlp_layers({3, 5, 2})), x).isZero());

  std::vector<LayerSpec> lin = {{3, 3, Activation::kIdentity}};
  MlpParams id = MlpParams::zeros(lin);
  for (int i = 0; i < 3; ++i) id.theta(i * 3 + i) = 1.0;
  CHECK(forward(id, x) == x);
}

TEST_CASE("forward: matches scalar-loop oracle") {
  SeededRng rng(2);
  const MlpParams p = random_net({5, 7, 3}, rng);
  const Matrix x = oracle::random_matrix(5, 5, rng);
  CHECK((forward(p, x) - oracle::forward(p, x)).cwiseAbs().maxCoeff() < 1e-12);
  const MlpParams deep = random_net({2, 4, 4, 1}, rng);
  const Matrix x2 = oracle::random_matrix(9, 2, rng);
  CHECK((forward(deep, x2) - oracle::forward(deep, x2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward: dimension mismatch") {
  const MlpParams p = MlpParams::zeros(mlp_layers({3, 2, 1}));
  CHECK_THROWS_AS(forward(p, Matrix::Zero(4, 2)), DimensionError);
}

TEST_CASE("loss: analytic values") {
  SeededRng rng(3);
  const MlpParams p = random_net({2, 4, 1}, rng);
  const Matrix x = oracle::random_matrix(6, 2, rng);
  CHECK(loss(p, Batch::regression(x, forward(p, x)), LossKind::kMse) == 0.0);

  const MlpParams z = MlpParams::zeros(mlp_layers({2, 3, 5}));
  const Batch b = Batch::classification(x, {0, 1, 2, 3, 4, 0});
  CHECK(loss(z, b, LossKind::kSoftmaxCrossEntropy) == doctest::Approx(std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("loss: matches oracle, large logits stay finite") {
  SeededRng rng(4);
  const MlpParams p = random_net({3, 6, 4}, rng);
  const Batch r = random_regression(7, 3, 4, rng);
  const Batch c = random_classification(7, 3, 4, rng);
  CHECK(loss(p, r, LossKind::kMse) == doctest::Approx(oracle::loss(p, r, LossKind::kMse)).epsilon(1e-13));
  CHECK(loss(p, c, LossKind::kSoftmaxCrossEntropy) ==
        doctest::Approx(oracle::loss(p, c, LossKind::kSoftmaxCrossEntropy)).epsilon(1e-13));

  MlpParams big = p;
  big.theta *= 40.0;
  CHECK(std::isfinite(loss(big, c, LossKind::kSoftmaxCrossEntropy)));
}

TEST_CASE("loss: errors") {
  SeededRng rng(5);
  MlpParams p = random_net({2, 3, 2}, rng);
  const Batch c = Batch::classification(Matrix::Zero(2, 2), {0, 2});
  CHECK_THROWS_AS(loss(p, c, LossKind::kSoftmaxCrossEntropy), DimensionError);
  const Batch r = Batch::regression(Matrix::Zero(2, 2), Matrix::Zero(2, 1));
  CHECK_THROWS_AS(loss(p, r, LossKind::kMse), DimensionError);
  CHECK_THROWS_AS(Batch::regression(Matrix::Zero(2, 2), Matrix::Zero(3, 1)), DimensionError);

  p.theta(4) = std::numeric_limits<double>::quiet_NaN();
  const Batch ok = Batch::regression(Matrix::Ones(2, 2), Matrix::Zero(2, 2));
  try {
    (void)loss(p, ok, LossKind::kMse);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.param_index() == 4);
  }
}

TEST_CASE("grad: stationary 1-parameter net") {
  std::vector<LayerSpec> one = {{1, 1, Activation::kIdentity}};
  MlpParams p = MlpParams::zeros(one);  // y = w x + b, with b pinned by data
  Matrix x(3, 1);
  x << 1, 2, 3;
  p.theta(0) = 2.0;
  const Batch b = Batch::regression(x, 2.0 * x);
  CHECK(grad(p, b, LossKind::kMse).norm() == 0.0);
}

TEST_CASE("grad: linear net equals least-squares closed form") {
  SeededRng rng(6);
  std::vector<LayerSpec> lin = {{3, 1, Activation::kIdentity}};
  MlpParams p = MlpParams::zeros(lin);
  for (Eigen::Index i = 0; i < 4; ++i) p.theta(i) = rng.normal(0.0, 1.0);
  const Batch b = random_regression(8, 3, 1, rng);
  Matrix xa(8, 4);
  xa << b.inputs, Matrix::Ones(8, 1);
  const Vector closed = 2.0 / 8.0 * xa.transpose() * (xa * p.theta - b.targets.col(0));
  CHECK((grad(p, b, LossKind::kMse) - closed).norm() < 1e-12);
}

TEST_CASE("grad: finite differences, both losses") {
  SeededRng rng(7);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 10; ++trial) {
    const MlpParams p = random_net({3, 5, 4}, rng);
    const Batch r = random_regression(6, 3, 4, rng);
    const Batch c = random_classification(6, 3, 4, rng);
    if (!oracle::away_from_kinks(p, r.inputs, 1e-3) || !oracle::away_from_kinks(p, c.inputs, 1e-3)) continue;
    for (auto [b, kind] : {std::pair{&r, LossKind::kMse}, std::pair{&c, LossKind::kSoftmaxCrossEntropy}}) {
      const auto f = [&](const Vector& t) { return loss(MlpParams(p.layers, t), *b, kind); };
      CHECK(oracle::rel_err(grad(p, *b, kind), oracle::fd_gradient(f, p.theta)) < 1e-5);
    }
    ++checked;
  }
  CHECK(checked == 10);
}

TEST_CASE("grad: softmax at uniform logits") {
  const MlpParams z = MlpParams::zeros(mlp_layers({2, 3, 4}));
  Matrix x(2, 2);
  x << 1, 2, -1, 0.5;
  const Batch b = Batch::classification(x, {1, 3});
  const Vector g = grad(z, b, LossKind::kSoftmaxCrossEntropy);
  // Only the output bias sees a signal: mean of (1/4 - onehot).
  const Vector out_bias = g.segment(z.offset(1) + 12, 4);
  CHECK(out_bias(0) == doctest::Approx(0.25));
  CHECK(out_bias(1) == doctest::Approx(-0.25));
  CHECK(out_bias(2) == doctest::Approx(0.25));
  CHECK(out_bias(3) == doctest::Approx(-0.25));
}

TEST_CASE("loss_and_grad agrees with separate calls") {
  SeededRng rng(8);
  const MlpParams p = random_net({3, 5, 4}, rng);
  const Batch c = random_classification(10, 3, 4, rng);
  const LossGrad lg = loss_and_grad(p, c, LossKind::kSoftmaxCrossEntropy);
  CHECK(lg.loss == loss(p, c, LossKind::kSoftmaxCrossEntropy));
  CHECK(lg.grad == grad(p, c, LossKind::kSoftmaxCrossEntropy));
  REQUIRE(lg.accuracy.has_value());
  CHECK(*lg.accuracy == accuracy(p, c));
  const Batch r = random_regression(4, 3, 4, rng);
  CHECK_FALSE(loss_and_grad(p, r, LossKind::kMse).accuracy.has_value());
}

TEST_CASE("hvp: linear net has constant Hessian") {
  SeededRng rng(9);
  std::vector<LayerSpec> lin = {{3, 1, Activation::kIdentity}};
  MlpParams p = MlpParams::zeros(lin);
  const Batch b = random_regression(8, 3, 1, rng);
  Matrix xa(8, 4);
  xa << b.inputs, Matrix::Ones(8, 1);
  const Matrix A = 2.0 / 8.0 * xa.transpose() * xa;
  for (int i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) p.theta(j) = rng.normal(0.0, 1.0);
    const Vector v = oracle::random_matrix(4, 1, rng).col(0);
    CHECK((hvp(p, b, LossKind::kMse, v) - A * v).norm() < 1e-12);
  }
  CHECK(hvp(p, b, LossKind::kMse, Vector::Zero(4)).isZero());
}

TEST_CASE("hvp: finite differences of grad, symmetry") {
  SeededRng rng(10);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 10; ++trial) {
    const MlpParams p = random_net({2, 6, 3}, rng);
    const Batch r = random_regression(5, 2, 3, rng);
    const Batch c = random_classification(5, 2, 3, rng);
    if (!oracle::away_from_kinks(p, r.inputs, 1e-2) || !oracle::away_from_kinks(p, c.inputs, 1e-2)) continue;
    for (auto [b, kind] : {std::pair{&r, LossKind::kMse}, std::pair{&c, LossKind::kSoftmaxCrossEntropy}}) {
      const Vector v = oracle::random_matrix(p.size(), 1, rng).col(0);
      const Vector w = oracle::random_matrix(p.size(), 1, rng).col(0);
      const double h = 1e-5;
      const Vector fd = (grad(MlpParams(p.layers, p.theta + h * v), *b, kind) -
                         grad(MlpParams(p.layers, p.theta - h * v), *b, kind)) /
                        (2.0 * h);
      const Vector hv = hvp(p, *b, kind, v);
      CHECK(oracle::rel_err(hv, fd) < 1e-4);
      const double a = w.dot(hv);
      const double s = v.dot(hvp(p, *b, kind, w));
      CHECK(std::abs(a - s) <= 1e-8 * std::max(1.0, std::abs(a)));
    }
    ++checked;
  }
  CHECK(checked == 10);
}

TEST_CASE("hvp: length mismatch") {
  const MlpParams p = MlpParams::zeros(mlp_layers({1, 2, 1}));
  const Batch b = Batch::regression(Matrix::Ones(1, 1), Matrix::Ones(1, 1));
  CHECK_THROWS_AS(hvp(p, b, LossKind::kMse, Vector::Zero(3)), DimensionError);
}
