#include <doctest.h>

#include "metasub/meta.hpp"
#include "metasub/taskgen.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace metasub;
using gen::classification_task;
using gen::random_net;
using gen::randomize_blocks;
using gen::regression_task;

namespace {

// Bias-only scalar problem: input x = 0 makes the net output its bias b, so
// the MSE against target c is (b - c)^2.
Task scalar_task(double support_target, double query_target) {
  Task t;
  t.support = Batch::regression(Matrix::Zero(1, 1), Matrix::Constant(1, 1, support_target));
  t.query = Batch::regression(Matrix::Zero(1, 1), Matrix::Constant(1, 1, query_target));
  return t;
}

MlpParams scalar_net(double b) {
  std::vector<LayerSpec> one = {{1, 1, Activation::kIdentity}};
  MlpParams p = MlpParams::zeros(one);
  p.theta(1) = b;
  return p;
}

}  // namespace

TEST_CASE("MetaState::create") {
  SeededRng rng(1);
  const MlpParams p = random_net({2, 3, 1}, rng);
  const MetaState maml = MetaState::create(p, MetaMethod::Kind::kMaml);
  CHECK_FALSE(maml.has_curvature());
  const MetaState mc = MetaState::create(p, MetaMethod::Kind::kMetaCurvature);
  REQUIRE(mc.mc_blocks.size() == 2);
  CHECK(mc.mc_blocks[0] == Matrix::Identity(9, 9));
  CHECK(mc.mc_blocks[1] == Matrix::Identity(4, 4));
  CHECK(mc.epoch == 0);
}

TEST_CASE("adapt: stationary support leaves theta unchanged") {
  const MetaState s = MetaState::create(scalar_net(2.0), MetaMethod::Kind::kMaml);
  const MlpParams a = adapt(s, scalar_task(2.0, 0.0), {MetaMethod::Kind::kMaml, 0.3});
  CHECK(a.theta == s.params.theta);
}

TEST_CASE("adapt: one hand-evaluated step") {
  // (b - 2)^2 at b = 0 has gradient -4; alpha = 0.25 gives b' = 1.
  const MetaState s = MetaState::create(scalar_net(0.0), MetaMethod::Kind::kMaml);
  const MlpParams a = adapt(s, scalar_task(2.0, 0.0), {MetaMethod::Kind::kMaml, 0.25});
  CHECK(a.theta(1) == 1.0);
  CHECK(a.theta(0) == 0.0);
}

TEST_CASE("adapt: identity curvature equals MAML; blocks precondition per layer") {
  SeededRng rng(2);
  const MlpParams p = random_net({3, 4, 2}, rng);
  const Task t = regression_task(3, 2, rng);
  MetaState maml = MetaState::create(p, MetaMethod::Kind::kMaml);
  MetaState mc = MetaState::create(p, MetaMethod::Kind::kMetaCurvature);
  const MlpParams a = adapt(maml, t, {MetaMethod::Kind::kMaml, 0.1});
  const MlpParams b = adapt(mc, t, {MetaMethod::Kind::kMetaCurvature, 0.1});
  CHECK(a.theta == b.theta);

  randomize_blocks(mc, rng, 0.3);
  const Vector g = grad(p, t.support, t.loss);
  const MlpParams c = adapt(mc, t, {MetaMethod::Kind::kMetaCurvature, 0.1});
  for (std::size_t l = 0; l < 2; ++l) {
    const Eigen::Index off = p.offset(l), n = p.layer_size(l);
    const Vector expect = p.theta.segment(off, n) - 0.1 * mc.mc_blocks[l] * g.segment(off, n);
    CHECK((c.theta.segment(off, n) - expect).norm() < 1e-13);
  }
}

TEST_CASE("adapt: method and state must agree") {
  SeededRng rng(3);
  const MlpParams p = random_net({1, 2, 1}, rng);
  const Task t = regression_task(1, 1, rng);
  const MetaState maml = MetaState::create(p, MetaMethod::Kind::kMaml);
  CHECK_THROWS_AS(adapt(maml, t, {MetaMethod::Kind::kMetaCurvature, 0.1}), ArgumentError);
  CHECK_THROWS_AS(adapt(maml, t, {MetaMethod::Kind::kMaml, -0.1}), ArgumentError);
}

TEST_CASE("meta_gradient: scalar quadratic closed form") {
  // L_S = (b - a)^2, L_Q = (b - q)^2, b' = b - 2 alpha (b - a),
  // dL_Q(b')/db = 2 (b' - q)(1 - 2 alpha).
  const double alpha = 0.1, a = 1.5, q = -0.7, b = 0.4;
  const MetaState s = MetaState::create(scalar_net(b), MetaMethod::Kind::kMaml);
  const MetaGradient mg = meta_gradient(s, {scalar_task(a, q)}, {MetaMethod::Kind::kMaml, alpha});
  const double bp = b - 2.0 * alpha * (b - a);
  CHECK(mg.dtheta(1) == doctest::Approx(2.0 * (bp - q) * (1.0 - 2.0 * alpha)).epsilon(1e-14));
  CHECK(mg.dtheta(0) == 0.0);
  CHECK(mg.mean_query_loss == doctest::Approx((bp - q) * (bp - q)));
  CHECK_FALSE(mg.mean_query_accuracy.has_value());
}

TEST_CASE("meta_gradient: alpha = 0 is the mean query gradient") {
  SeededRng rng(4);
  const MlpParams p = random_net({2, 5, 3}, rng);
  std::vector<Task> tasks;
  for (int i = 0; i < 4; ++i) tasks.push_back(classification_task(2, 3, rng));
  const MetaState s = MetaState::create(p, MetaMethod::Kind::kMaml);
  const MetaGradient mg = meta_gradient(s, tasks, {MetaMethod::Kind::kMaml, 0.0});
  Vector mean = Vector::Zero(p.size());
  for (const auto& t : tasks) mean += grad(p, t.query, t.loss);
  mean /= 4.0;
  CHECK((mg.dtheta - mean).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(mg.mean_query_accuracy.has_value());
}

TEST_CASE("meta_gradient: identity curvature reproduces MAML bitwise") {
  SeededRng rng(5);
  const MlpParams p = random_net({3, 6, 2}, rng);
  std::vector<Task> tasks;
  for (int i = 0; i < 5; ++i) tasks.push_back(regression_task(3, 2, rng));
  const MetaState maml = MetaState::create(p, MetaMethod::Kind::kMaml);
  const MetaState mc = MetaState::create(p, MetaMethod::Kind::kMetaCurvature);
  const MetaGradient a = meta_gradient(maml, tasks, {MetaMethod::Kind::kMaml, 0.05});
  const MetaGradient b = meta_gradient(mc, tasks, {MetaMethod::Kind::kMetaCurvature, 0.05});
  CHECK(a.dtheta == b.dtheta);
  CHECK(a.mean_query_loss == b.mean_query_loss);
  CHECK(a.dblocks.empty());
  CHECK(b.dblocks.size() == 2);
}

TEST_CASE("meta_gradient: finite differences, both methods and losses") {
  SeededRng rng(6);
  const double h = 1e-5;
  for (auto kind : {MetaMethod::Kind::kMaml, MetaMethod::Kind::kMetaCurvature}) {
    for (auto loss_kind : {LossKind::kMse, LossKind::kSoftmaxCrossEntropy}) {
      const MlpParams p = random_net({2, 5, 3}, rng);
      std::vector<Task> tasks;
      for (int i = 0; i < 3; ++i) {
        tasks.push_back(loss_kind == LossKind::kMse ? regression_task(2, 3, rng) : classification_task(2, 3, rng));
      }
      MetaState s = MetaState::create(p, kind);
      randomize_blocks(s, rng, 0.2);
      const MetaMethod method{kind, 0.1};
      const MetaGradient mg = meta_gradient(s, tasks, method);

      const auto f = [&](const Vector& t) {
        MetaState c = s;
        c.params.theta = t;
        return meta_objective(c, tasks, method);
      };
      CHECK(oracle::rel_err(mg.dtheta, oracle::fd_gradient(f, p.theta, h)) < 1e-4);

      for (std::size_t l = 0; l < s.mc_blocks.size(); ++l) {
        Matrix fd(s.mc_blocks[l].rows(), s.mc_blocks[l].cols());
        for (Eigen::Index j = 0; j < fd.cols(); ++j) {
          for (Eigen::Index i = 0; i < fd.rows(); ++i) {
            MetaState c = s;
            c.mc_blocks[l](i, j) += h;
            const double fp = meta_objective(c, tasks, method);
            c.mc_blocks[l](i, j) -= 2.0 * h;
            const double fm = meta_objective(c, tasks, method);
            fd(i, j) = (fp - fm) / (2.0 * h);
          }
        }
        CHECK((mg.dblocks[l] - fd).norm() <= 1e-4 * std::max(fd.norm(), 1e-8));
      }
    }
  }
}

TEST_CASE("meta_gradient: threads do not change the result") {
  SeededRng rng(7);
  const MlpParams p = random_net({1, 8, 1}, rng);
  SineFamilySpec spec;
  std::vector<Task> tasks;
  for (int i = 0; i < 9; ++i) tasks.push_back(sample_sine_task(spec, rng));
  MetaState s = MetaState::create(p, MetaMethod::Kind::kMetaCurvature);
  const MetaMethod m{MetaMethod::Kind::kMetaCurvature, 0.01};
  const MetaGradient a = meta_gradient(s, tasks, m, 1);
  const MetaGradient b = meta_gradient(s, tasks, m, 4);
  CHECK(a.dtheta == b.dtheta);
  CHECK(a.dblocks[0] == b.dblocks[0]);
  CHECK(a.dblocks[1] == b.dblocks[1]);
}

TEST_CASE("meta_gradient: empty task list") {
  const MetaState s = MetaState::create(scalar_net(0.0), MetaMethod::Kind::kMaml);
  CHECK_THROWS_AS(meta_gradient(s, {}, {}), ArgumentError);
}

namespace {

TaskSampler sine_sampler(int n) {
  SineFamilySpec spec;
  spec.n_sines = n;
  return [spec](SeededRng& rng) { return sample_sine_task(spec, rng); };
}

TrainOptions small_options(MetaMethod::Kind kind, int epochs) {
  TrainOptions o;
  o.method = {kind, 0.01};
  o.epochs = epochs;
  o.batches_per_epoch = 3;
  o.meta_batch_size = 4;
  return o;
}

}  // namespace

TEST_CASE("train: zero epochs is a no-op") {
  SeededRng init(1), rng(2);
  const MetaState s = MetaState::create(MlpParams::glorot(mlp_layers({1, 8, 1}), init), MetaMethod::Kind::kMaml);
  const TrainResult r = train(s, small_options(MetaMethod::Kind::kMaml, 0), sine_sampler(1), rng);
  CHECK(r.history.empty());
  CHECK(r.state.params.theta == s.params.theta);
  CHECK(r.state.epoch == 0);
}

TEST_CASE("train: deterministic under seed, history per epoch") {
  for (auto kind : {MetaMethod::Kind::kMaml, MetaMethod::Kind::kMetaCurvature}) {
    auto run = [&](std::uint64_t seed) {
      SeededRng init(seed), rng(seed + 100);
      const MetaState s = MetaState::create(MlpParams::glorot(mlp_layers({1, 8, 1}), init), kind);
      return train(s, small_options(kind, 3), sine_sampler(2), rng);
    };
    const TrainResult a = run(4), b = run(4), c = run(5);
    CHECK(a.state.params.theta == b.state.params.theta);
    CHECK(a.state.params.theta != c.state.params.theta);
    REQUIRE(a.history.size() == 3);
    CHECK(a.history[2].epoch == 3);
    CHECK(a.state.epoch == 3);
    CHECK(a.history[0].mean_query_loss == b.history[0].mean_query_loss);
    if (kind == MetaMethod::Kind::kMetaCurvature) CHECK(a.state.mc_blocks[0] != Matrix::Identity(16, 16));
  }
}

TEST_CASE("train: divergence names the epoch") {
  SeededRng init(1), rng(2);
  const MetaState s = MetaState::create(MlpParams::glorot(mlp_layers({1, 8, 1}), init), MetaMethod::Kind::kMaml);
  TrainOptions o = small_options(MetaMethod::Kind::kMaml, 2);
  o.method.inner_lr = 1e300;
  try {
    (void)train(s, o, sine_sampler(1), rng);
    FAIL("expected DivergedError");
  } catch (const DivergedError& e) {
    CHECK(e.epoch() == 1);
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("train: invalid options") {
  SeededRng init(1), rng(2);
  const MetaState s = MetaState::create(MlpParams::glorot(mlp_layers({1, 4, 1}), init), MetaMethod::Kind::kMaml);
  TrainOptions o = small_options(MetaMethod::Kind::kMaml, 1);
  o.meta_batch_size = 0;
  CHECK_THROWS_AS(train(s, o, sine_sampler(1), rng), ValidationError);
  o = small_options(MetaMethod::Kind::kMaml, 1);
  o.outer.lr = 0.0;
  CHECK_THROWS_AS(train(s, o, sine_sampler(1), rng), ValidationError);
}

TEST_CASE("collect_adapted: shape, duplicates, descriptors") {
  SeededRng init(1), rng(2);
  const MetaState s = MetaState::create(MlpParams::glorot(mlp_layers({1, 6, 1}), init), MetaMethod::Kind::kMaml);
  SineFamilySpec spec;
  std::vector<Task> tasks;
  for (int i = 0; i < 4; ++i) tasks.push_back(sample_sine_task(spec, rng));
  tasks.push_back(tasks[1]);
  const AdaptedParamsMatrix m = collect_adapted(s, tasks, {MetaMethod::Kind::kMaml, 0.01});
  CHECK(m.count() == 5);
  CHECK(m.dim() == s.params.size());
  CHECK(m.rows.row(1) == m.rows.row(4));
  CHECK(m.descriptors[2].values == tasks[2].descriptor.values);
  CHECK(m.rows.row(0).transpose() == adapt(s, tasks[0], {MetaMethod::Kind::kMaml, 0.01}).theta);
  CHECK_THROWS_AS(collect_adapted(s, {}, {}), ArgumentError);
}

TEST_CASE("collect_adapted: shared support inputs give an affine image of the amplitudes") {
  // With the support x fixed, grad_S is affine in A, so the adapted cloud has
  // rank <= N + 1 before centering.
  SeededRng init(3), rng(4);
  const MetaState s = MetaState::create(MlpParams::glorot(mlp_layers({1, 40, 40, 1}), init), MetaMethod::Kind::kMaml);
  SineFamilySpec spec;
  const Task base = sample_sine_task(spec, rng);
  std::vector<Task> tasks;
  for (int i = 0; i < 200; ++i) {
    Task t = base;
    Vector a(2);
    a << rng.uniform(0.1, 5.0), rng.uniform(0.1, 5.0);
    t.support.targets = sine_targets(a, t.support.inputs);
    tasks.push_back(t);
  }
  const AdaptedParamsMatrix m = collect_adapted(s, tasks, {MetaMethod::Kind::kMaml, 0.01});
  Eigen::JacobiSVD<Matrix> svd(m.rows);
  const Vector sv = svd.singularValues();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv(i) > 1e-6 * sv(0);
  CHECK(rank <= 3);
}
