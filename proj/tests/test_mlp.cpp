#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "shiftlab/error.hpp"
#include "shiftlab/mlp.hpp"
#include "shiftlab/random.hpp"

using namespace shiftlab;

namespace {

Matrix randn(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Vector flatten(const Gradients& g) {
  std::vector<double> v;
  for (const auto& l : g) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) v.push_back(l.weight(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) v.push_back(l.bias(r));
  }
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Max relative error between the analytic gradient and central differences.
double gradient_check(Activation act, int layers, LossKind kind, std::uint64_t seed) {
  MlpConfig cfg;
  cfg.hidden_layers = layers;
  cfg.width = 6;
  cfg.activation = act;
  cfg.input_dim = 4;
  cfg.output_dim = 3;
  MlpModel model(cfg, seed);
  const Matrix x = randn(5, 4, seed + 1);
  const Matrix y = randn(5, 3, seed + 2) * 2.0;
  const LossSpec spec{kind, 1.0};
  ForwardCache cache;
  const Matrix pred = forward(model, x, false, 0, &cache);
  const Vector analytic = flatten(backward(model, cache, loss_gradient(spec, pred, y)));
  const Vector theta = model.flat_parameters();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(theta(i)));
    Vector tp = theta, tm = theta;
    tp(i) += h;
    tm(i) -= h;
    model.set_flat_parameters(tp);
    const double fp = loss(spec, forward(model, x), y);
    model.set_flat_parameters(tm);
    const double fm = loss(spec, forward(model, x), y);
    const double numeric = (fp - fm) / (2 * h);
    // floor for components whose true gradient is zero
    const double denom = std::max(std::abs(analytic(i)) + std::abs(numeric), 1e-4);
    worst = std::max(worst, std::abs(analytic(i) - numeric) / denom);
  }
  model.set_flat_parameters(theta);
  return worst;
}

}  // namespace

TEST_CASE("forward pass basics") {
  MlpConfig lin;
  lin.hidden_layers = 0;
  lin.input_dim = 1;
  lin.output_dim = 1;
  DenseLayer l{Matrix::Constant(1, 1, 2.0), Vector::Constant(1, 1.0)};
  const MlpModel m(lin, std::vector<DenseLayer>{l});
  CHECK(forward(m, Matrix::Constant(1, 1, 3.0))(0, 0) == 7.0);

  Matrix z(1, 3);
  z << -1, 0, 2;
  Matrix relu(1, 3);
  relu << 0, 0, 2;
  CHECK(activate(Activation::ReLU, z) == relu);
  CHECK(activate(Activation::GELU, Matrix::Zero(1, 1))(0, 0) == 0.0);
  CHECK(activate(Activation::GELU, Matrix::Constant(1, 1, 1.0))(0, 0) ==
        doctest::Approx(0.5 * (1 + std::erf(1 / std::sqrt(2.0)))).epsilon(1e-15));

  MlpConfig cfg;
  cfg.hidden_layers = 2;
  cfg.width = 8;
  cfg.input_dim = 3;
  cfg.output_dim = 2;
  const MlpModel net(cfg, 4);
  const Matrix x = randn(7, 3, 5);
  CHECK(forward(net, x, true, 123) == forward(net, x, false));
  CHECK_THROWS_AS(forward(net, randn(2, 4, 1)), ValidationError);
  CHECK(net.parameter_count() == (3 * 8 + 8) + (8 * 8 + 8) + (8 * 2 + 2));
}

TEST_CASE("loss values and gradients") {
  const Matrix zero = Matrix::Zero(2, 2);
  for (LossKind k : {LossKind::MSE, LossKind::Huber}) {
    CHECK(loss({k, 1.0}, zero, zero) == 0.0);
    CHECK(loss_gradient({k, 1.0}, zero, zero).cwiseAbs().maxCoeff() == 0.0);
  }
  const Matrix t = Matrix::Zero(1, 1);
  CHECK(loss({LossKind::Huber, 1.0}, Matrix::Constant(1, 1, 0.5), t) == doctest::Approx(0.125));
  CHECK(loss({LossKind::Huber, 1.0}, Matrix::Constant(1, 1, 2.0), t) == doctest::Approx(1.5));
  // continuity of value and slope at the threshold
  const double below = loss({LossKind::Huber, 1.0}, Matrix::Constant(1, 1, 1.0 - 1e-9), t);
  const double above = loss({LossKind::Huber, 1.0}, Matrix::Constant(1, 1, 1.0 + 1e-9), t);
  CHECK(std::abs(below - above) < 1e-8);
  CHECK(loss_gradient({LossKind::Huber, 1.0}, Matrix::Constant(1, 1, 3.0), t)(0, 0) == 1.0);

  // MSE gradient vs central differences on a random 5x3 batch.
  const Matrix p = randn(5, 3, 1), y = randn(5, 3, 2);
  const Matrix g = loss_gradient({LossKind::MSE}, p, y);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Matrix pp = p, pm = p;
    pp.data()[i] += 1e-6;
    pm.data()[i] -= 1e-6;
    const double num = (loss({LossKind::MSE}, pp, y) - loss({LossKind::MSE}, pm, y)) / 2e-6;
    worst = std::max(worst, std::abs(num - g.data()[i]) / std::max(std::abs(g.data()[i]), 1e-12));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("property: backprop matches finite differences") {
  for (Activation a : {Activation::ReLU, Activation::GELU, Activation::Tanh}) {
    for (int layers = 1; layers <= 3; ++layers) {
      for (LossKind k : {LossKind::MSE, LossKind::Huber}) {
        CAPTURE(to_string(a));
        CAPTURE(layers);
        CAPTURE(to_string(k));
        CHECK(gradient_check(a, layers, k, 10 * layers + static_cast<int>(a)) < 1e-5);
      }
    }
  }
}

TEST_CASE("property: inverted dropout preserves the expectation") {
  MlpConfig cfg;
  cfg.hidden_layers = 1;
  cfg.width = 32;
  cfg.dropout = 0.3;
  cfg.input_dim = 3;
  cfg.output_dim = 1;
  const MlpModel m(cfg, 2);
  const Matrix x = randn(4, 3, 3);
  const Matrix eval = forward(m, x);
  Matrix mean = Matrix::Zero(4, 1);
  const int draws = 20000;
  for (int s = 0; s < draws; ++s) mean += forward(m, x, true, static_cast<std::uint64_t>(s)) / draws;
  CHECK((mean - eval).cwiseAbs().maxCoeff() < 0.02 * std::max(1.0, eval.cwiseAbs().maxCoeff()));
  CHECK(forward(m, x, true, 1) != eval);
}

TEST_CASE("optimizers") {
  MlpConfig cfg;
  cfg.hidden_layers = 1;
  cfg.width = 4;
  cfg.input_dim = 2;
  cfg.output_dim = 1;
  const MlpModel start(cfg, 7);
  Gradients zero;
  for (const auto& l : start.layers()) {
    zero.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  SUBCASE("AdamW shrinks weights geometrically under a zero gradient") {
    MlpModel m = start;
    AdamOptimizer opt(OptimizerKind::AdamW, 0.1);
    const double lr = 0.01;
    for (int s = 0; s < 5; ++s) opt.step(m, zero, lr);
    const double factor = std::pow(1.0 - lr * 0.1, 5);
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
      CHECK((m.layers()[l].weight - factor * start.layers()[l].weight).cwiseAbs().maxCoeff() < 1e-15);
    }
  }
  SUBCASE("Adam without decay leaves weights unchanged under a zero gradient") {
    MlpModel m = start;
    AdamOptimizer opt(OptimizerKind::Adam, 0.0);
    for (int s = 0; s < 5; ++s) opt.step(m, zero, 0.01);
    CHECK(m == start);
  }
  SUBCASE("Adam couples decay into the gradient") {
    MlpModel m = start;
    AdamOptimizer opt(OptimizerKind::Adam, 0.1);
    opt.step(m, zero, 0.01);
    CHECK_FALSE(m == start);
  }
}

TEST_CASE("property: Adam decreases a convex quadratic monotonically after warm-up") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MlpConfig cfg;
    cfg.hidden_layers = 0;
    cfg.input_dim = 3;
    cfg.output_dim = 1;
    MlpModel m(cfg, seed);
    const Matrix x = randn(50, 3, 100 + seed);
    Matrix w(3, 1);
    w << 1.5, -2.0, 0.5;
    const Matrix y = x * w;
    AdamOptimizer opt(OptimizerKind::Adam, 0.0);
    double prev = 0.0;
    bool monotone = true;
    for (int step = 0; step < 400; ++step) {
      ForwardCache cache;
      const Matrix pred = forward(m, x, false, 0, &cache);
      const double l = loss({LossKind::MSE}, pred, y);
      if (step > 10 && l > prev) monotone = false;
      prev = l;
      opt.step(m, backward(m, cache, loss_gradient({LossKind::MSE}, pred, y)), 1e-3);
    }
    CHECK(monotone);
  }
}

TEST_CASE("schedule and early stopping") {
  LrSchedule s{LrSchedule::Kind::Step, 3, 0.05};
  for (int e = 1; e <= 3; ++e) CHECK(s.at(1e-4, e) == doctest::Approx(1e-4).epsilon(1e-15));
  for (int e = 4; e <= 6; ++e) CHECK(s.at(1e-4, e) == doctest::Approx(5e-6).epsilon(1e-15));
  CHECK(s.at(1e-4, 7) == doctest::Approx(2.5e-7).epsilon(1e-15));

  TrainConfig cfg;
  cfg.max_epochs = 100;
  cfg.early_stop = {20, 1e-7};
  int saves = 0;
  EpochHooks hooks{[](int, double) { return 1.0; }, [] { return 0.5; }, [&] { ++saves; }, [] {}};
  const TrainRecord r = run_training_loop(cfg, 1e-3, hooks);
  CHECK(r.stopped_early);
  CHECK(r.epochs_run == 21);  // best at epoch 1, then 20 non-improving epochs
  CHECK(r.best_epoch == 1);
  CHECK(saves == 1);

  // improvements smaller than min_delta do not count
  int calls = 0;
  EpochHooks tiny{[](int, double) { return 1.0; }, [&] { return 1.0 - 5e-8 * (calls++ % 2); }, [] {}, [] {}};
  CHECK(run_training_loop(cfg, 1e-3, tiny).epochs_run == 21);

  EpochHooks nan{[](int e, double) { return e == 3 ? std::nan("") : 1.0; }, [] { return 1.0; }, [] {}, [] {}};
  try {
    run_training_loop(cfg, 1e-3, nan);
    FAIL("expected a failure");
  } catch (const RuntimeFailure& e) {
    CHECK(std::string(e.what()).find("epoch 3") != std::string::npos);
  }
}

TEST_CASE("training recovers an exactly linear map") {
  const Matrix x = randn(200, 3, 1);
  Matrix A(2, 3);
  A << 1.0, -0.5, 2.0, 0.3, 0.0, -1.2;
  const Vector b = (Vector(2) << 0.7, -0.2).finished();
  const Matrix y = (x * A.transpose()).rowwise() + b.transpose();
  MlpConfig cfg;
  cfg.hidden_layers = 0;
  cfg.input_dim = 3;
  cfg.output_dim = 2;
  cfg.learning_rate = 1e-2;
  TrainConfig tc;
  tc.max_epochs = 3000;
  tc.early_stop = {100, 0.0};
  tc.loss = {LossKind::MSE};
  const auto res = train(x.topRows(150), y.topRows(150), x.bottomRows(50), y.bottomRows(50), cfg, tc);
  const auto& layer = res.model.layers()[0];
  CHECK((layer.weight - A).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((layer.bias - b).cwiseAbs().maxCoeff() < 1e-3);
  CHECK(res.record.restored_best);
  // restored weights correspond to the best validation epoch
  const double vl = loss({LossKind::MSE}, forward(res.model, x.bottomRows(50)), y.bottomRows(50));
  CHECK(vl == doctest::Approx(res.record.val_loss[static_cast<std::size_t>(res.record.best_epoch - 1)]));
}

TEST_CASE("property: training is fully deterministic") {
  const Matrix x = randn(120, 4, 3), y = randn(120, 2, 4);
  MlpConfig cfg;
  cfg.hidden_layers = 2;
  cfg.width = 16;
  cfg.activation = Activation::GELU;
  cfg.dropout = 0.1;
  cfg.weight_decay = 1e-3;
  cfg.input_dim = 4;
  cfg.output_dim = 2;
  TrainConfig tc;
  tc.optimizer = OptimizerKind::AdamW;
  tc.batch_size = 32;
  tc.max_epochs = 15;
  tc.loss = {LossKind::Huber};
  tc.seed = 9;
  const auto a = train(x.topRows(100), y.topRows(100), x.bottomRows(20), y.bottomRows(20), cfg, tc);
  const auto b = train(x.topRows(100), y.topRows(100), x.bottomRows(20), y.bottomRows(20), cfg, tc);
  CHECK(a.record == b.record);
  CHECK(a.model == b.model);
  tc.seed = 10;
  const auto c = train(x.topRows(100), y.topRows(100), x.bottomRows(20), y.bottomRows(20), cfg, tc);
  CHECK_FALSE(c.model == a.model);
}

TEST_CASE("random search space") {
  const SearchSpace space;
  int layer_counts[7] = {0};
  int below_256 = 0;
  const int n = 10000;
  for (int s = 0; s < n; ++s) {
    const MlpConfig c = sample_hyperparams(space, static_cast<std::uint64_t>(s));
    ++layer_counts[c.hidden_layers];
    CHECK(c.width >= 64);
    CHECK(c.width <= 1024);
    if (c.width < 256) ++below_256;
    CHECK(c.dropout >= 0.0);
    CHECK(c.dropout <= 0.25);
    CHECK(c.weight_decay >= 1e-5);
    CHECK(c.weight_decay <= 1e-2);
    CHECK(c.learning_rate >= 5e-4);
    CHECK(c.learning_rate <= 1e-2);
  }
  for (int l = 2; l <= 6; ++l) CHECK(std::abs(layer_counts[l] / double(n) - 0.2) < 0.02);
  CHECK(std::abs(below_256 / double(n) - 0.5) < 0.02);
  CHECK(sample_hyperparams(space, 77) == sample_hyperparams(space, 77));
  SearchSpace empty;
  empty.hidden_layers.clear();
  CHECK_THROWS_AS(sample_hyperparams(empty, 1), ValidationError);
}

TEST_CASE("quality filter") {
  std::vector<std::pair<double, double>> r;
  for (int i = 1; i <= 10; ++i) r.emplace_back(i, 1.0);
  auto keep = quality_filter(r, 90.0);
  CHECK(keep.size() == 9);
  CHECK(std::find(keep.begin(), keep.end(), 9u) == keep.end());

  std::vector<std::pair<double, double>> same(5, {2.0, 2.0});
  CHECK(quality_filter(same, 90.0).size() == 5);

  std::vector<std::pair<double, double>> only_b;
  for (int i = 0; i < 10; ++i) only_b.emplace_back(1.0, i == 3 ? 50.0 : 1.0);
  keep = quality_filter(only_b, 90.0);
  CHECK(keep.size() == 9);
  CHECK(std::find(keep.begin(), keep.end(), 3u) == keep.end());

  CHECK_THROWS_AS(quality_filter(r, 0.0), ValidationError);
  CHECK_THROWS_AS(quality_filter(r, 100.0), ValidationError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  MlpConfig cfg;
  cfg.hidden_layers = 3;
  cfg.width = 9;
  cfg.activation = Activation::Tanh;
  cfg.dropout = 0.05;
  cfg.weight_decay = 3e-4;
  cfg.learning_rate = 1.234e-3;
  cfg.input_dim = 5;
  cfg.output_dim = 2;
  MlpModel m(cfg, 11);
  m.layers()[0].weight(0, 0) = 1.0 / 3.0;
  m.layers()[1].bias(2) = -5e-310;  // subnormal
  std::stringstream ss;
  save_checkpoint(m, ss);
  CHECK(ss.str().rfind(std::string(kMlpMagic), 0) == 0);
  const MlpModel back = load_checkpoint(ss);
  CHECK(back == m);
  CHECK(back.config() == m.config());

  std::stringstream bad("NOT-A-CHECKPOINT\n");
  CHECK_THROWS_AS(load_checkpoint(bad), ValidationError);
}
