#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Cholesky>

#include "hiercls/model.hpp"
#include "test_support.hpp"

using namespace hiercls;
using hiercls::testing::small_tree;
using doctest::Approx;

namespace {

Taxonomy two_class_tree() { return Taxonomy::from_parent_map({{"a", "R"}, {"b", "R"}}, {"a", "b"}); }

// Two Gaussian blobs separated along the first axis by a wide margin.
Dataset separable_two_class(int per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Dataset d;
  d.features.resize(2 * per_class, 2);
  for (int i = 0; i < 2 * per_class; ++i) {
    const int label = i < per_class ? 0 : 1;
    d.features(i, 0) = (label == 0 ? -3.0 : 3.0) + noise(rng);
    d.features(i, 1) = noise(rng);
    d.labels.push_back(label);
  }
  return d;
}

Dataset small_synth(const Taxonomy& t, int per_class, double noise, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.per_class = per_class;
  cfg.dim = 6;
  cfg.noise_scale = noise;
  cfg.seed = seed;
  return synth_hierarchical(t, cfg);
}

TrainingTrace run(const Taxonomy& t, Head head, LossConfig loss, const Dataset& train_data, const Dataset& val,
                  int steps, std::uint64_t seed, double lr = 1e-2) {
  const Objective objective(t, head, loss);
  ClassifierModel m(head, static_cast<int>(train_data.feature_dim()), objective.output_dim(), 0, seed);
  auto opt = OptimizerState::for_model(m, {lr});
  return train(m, train_data, val, objective, t, opt, {steps, 16, std::max(1, steps / 10), seed}, {1});
}

double poly(const Eigen::VectorXd& c, double x) {
  double acc = 0.0;
  for (Eigen::Index i = c.size(); i-- > 0;) acc = acc * x + c[i];
  return acc;
}

}  // namespace

TEST_CASE("forward pass") {
  ClassifierModel zero(Head::class_probs, 3, 4, 0, 1);
  zero.layers[0].weight.setZero();
  zero.layers[0].bias.setZero();
  const Eigen::VectorXd logits = zero.forward_one(Eigen::VectorXd::Ones(3));
  CHECK(logits.isZero());
  CHECK((softmax(logits).array() - 0.25).abs().maxCoeff() < 1e-15);

  ClassifierModel id(Head::class_probs, 2, 2, 0, 1);
  id.layers[0].weight.setIdentity();
  id.layers[0].bias.setZero();
  CHECK(id.forward_one(Eigen::Vector2d(1, 0)) == Eigen::Vector2d(1, 0));
  CHECK_THROWS_AS(id.forward_one(Eigen::Vector3d(1, 0, 0)), Error);
}

TEST_CASE("backward matches finite differences, affine and hidden") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int hidden : {0, 5}) {
    ClassifierModel m(Head::class_probs, 4, 3, hidden, 7);
    for (auto& l : m.layers) {
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = g(rng);
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = g(rng);
    }
    Eigen::MatrixXd x(6, 4), w(6, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
    auto objective = [&](const ClassifierModel& mm) { return (mm.forward(x).array() * w.array()).sum(); };
    const auto grads = m.backward(x, w);
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
      for (Eigen::Index i = 0; i < m.layers[li].weight.size(); ++i) {
        ClassifierModel p = m, q = m;
        p.layers[li].weight.data()[i] += 1e-6;
        q.layers[li].weight.data()[i] -= 1e-6;
        CHECK(grads[li].weight.data()[i] == Approx((objective(p) - objective(q)) / 2e-6).epsilon(1e-6));
      }
      for (Eigen::Index i = 0; i < m.layers[li].bias.size(); ++i) {
        ClassifierModel p = m, q = m;
        p.layers[li].bias[i] += 1e-6;
        q.layers[li].bias[i] -= 1e-6;
        CHECK(grads[li].bias[i] == Approx((objective(p) - objective(q)) / 2e-6).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("Adam matches a hand-written reference over 10 steps") {
  ClassifierModel m(Head::class_probs, 2, 2, 0, 3);
  const ClassifierModel start = m;
  AdamOptions o{1e-2, 0.9, 0.999, 1e-8};
  auto s = OptimizerState::for_model(m, o);

  // reference on a flat parameter list, recomputed from scratch
  std::vector<double> theta, mom(6, 0.0), vel(6, 0.0);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) theta.push_back(start.layers[0].weight(r, c));
  theta.push_back(start.layers[0].bias[0]);
  theta.push_back(start.layers[0].bias[1]);

  for (int step = 1; step <= 10; ++step) {
    std::vector<double> gflat(6);
    for (int i = 0; i < 6; ++i) gflat[i] = std::sin(0.7 * step + i) * (i + 1);
    std::vector<Layer> grads(1);
    grads[0].weight.resize(2, 2);
    grads[0].weight << gflat[0], gflat[1], gflat[2], gflat[3];
    grads[0].bias = Eigen::Vector2d(gflat[4], gflat[5]);
    adam_update(m, grads, s);
    for (int i = 0; i < 6; ++i) {
      mom[i] = 0.9 * mom[i] + 0.1 * gflat[i];
      vel[i] = 0.999 * vel[i] + 0.001 * gflat[i] * gflat[i];
      const double mhat = mom[i] / (1 - std::pow(0.9, step));
      const double vhat = vel[i] / (1 - std::pow(0.999, step));
      theta[i] -= 1e-2 * mhat / (std::sqrt(vhat) + 1e-8);
    }
  }
  CHECK(s.step == 10);
  CHECK(m.layers[0].weight(0, 0) == Approx(theta[0]).epsilon(1e-13));
  CHECK(m.layers[0].weight(0, 1) == Approx(theta[1]).epsilon(1e-13));
  CHECK(m.layers[0].weight(1, 0) == Approx(theta[2]).epsilon(1e-13));
  CHECK(m.layers[0].weight(1, 1) == Approx(theta[3]).epsilon(1e-13));
  CHECK(m.layers[0].bias[0] == Approx(theta[4]).epsilon(1e-13));
  CHECK(m.layers[0].bias[1] == Approx(theta[5]).epsilon(1e-13));
  CHECK(AdamOptions{}.learning_rate == 1e-5);
}

TEST_CASE("cross-entropy separates a separable two-class set") {
  const Taxonomy t = two_class_tree();
  const Dataset d = separable_two_class(100, 4);
  const Objective objective(t, Head::class_probs, LossConfig::cross_entropy());
  ClassifierModel m(Head::class_probs, 2, 2, 0, 1);
  auto opt = OptimizerState::for_model(m, {1e-3});
  train(m, d, d, objective, t, opt, {2000, 32, 500, 1}, {1});
  CHECK(evaluate(m, d, t, objective, {1}).top_k_error.at(1) == 0.0);
}

TEST_CASE("training is bitwise deterministic") {
  const Taxonomy t = make_balanced_tree(2, 3);
  const Dataset d = small_synth(t, 20, 0.8, 3);
  for (auto loss : {LossConfig::cross_entropy(), LossConfig::hxe(0.4), LossConfig::soft(5.0)}) {
    const auto a = run(t, Head::class_probs, loss, d, d, 200, 9);
    const auto b = run(t, Head::class_probs, loss, d, d, 200, 9);
    CHECK(a.step_losses == b.step_losses);
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i)
      CHECK(checkpoint_text(a.checkpoints[i].model, "h", 0) == checkpoint_text(b.checkpoints[i].model, "h", 0));
    const auto c = run(t, Head::class_probs, loss, d, d, 200, 10);
    CHECK(a.step_losses != c.step_losses);
  }
}

TEST_CASE("limit losses reproduce the cross-entropy trace") {
  const Taxonomy t = make_balanced_tree(3, 2);
  const Dataset d = small_synth(t, 30, 0.8, 5);
  const auto ce = run(t, Head::class_probs, LossConfig::cross_entropy(), d, d, 300, 2);
  const auto hxe = run(t, Head::class_probs, LossConfig::hxe(1e-9), d, d, 300, 2);
  const auto soft = run(t, Head::class_probs, LossConfig::soft(1e9), d, d, 300, 2);
  double worst_hxe = 0.0, worst_soft = 0.0;
  for (std::size_t i = 0; i < ce.step_losses.size(); ++i) {
    worst_hxe = std::max(worst_hxe, std::abs(ce.step_losses[i] - hxe.step_losses[i]));
    worst_soft = std::max(worst_soft, std::abs(ce.step_losses[i] - soft.step_losses[i]));
  }
  CHECK(worst_hxe < 1e-6);
  CHECK(worst_soft < 1e-6);
}

TEST_CASE("full-batch gradient descent decreases every loss") {
  const Taxonomy t = make_balanced_tree(2, 3);
  const Dataset d = small_synth(t, 10, 0.8, 6);
  for (auto [head, loss] : {std::pair{Head::class_probs, LossConfig::cross_entropy()},
                            {Head::class_probs, LossConfig::hxe(0.5)},
                            {Head::class_probs, LossConfig::soft(4.0)},
                            {Head::conditional_probs, LossConfig::hxe(0.5)}}) {
    const Objective objective(t, head, loss);
    ClassifierModel m(head, static_cast<int>(d.feature_dim()), objective.output_dim(), 0, 2);
    double prev = mean_loss(m, d, objective);
    for (int step = 0; step < 100; ++step) {
      const Eigen::MatrixXd logits = m.forward(d.features);
      Eigen::MatrixXd dl(logits.rows(), logits.cols());
      for (Eigen::Index i = 0; i < logits.rows(); ++i)
        dl.row(i) = objective.loss_and_grad(logits.row(i).transpose(), d.labels[i]).grad.transpose() /
                    static_cast<double>(d.size());
      const auto g = m.backward(d.features, dl);
      m.layers[0].weight -= 0.05 * g[0].weight;
      m.layers[0].bias -= 0.05 * g[0].bias;
      const double now = mean_loss(m, d, objective);
      REQUIRE(now <= prev + 1e-12);
      prev = now;
    }
  }
}

TEST_CASE("uniform-logit model ranks classes in class order") {
  const Taxonomy t = small_tree();
  Dataset d;
  d.features = Eigen::MatrixXd::Ones(3, 2);
  d.labels = {0, 1, 2};
  const Objective objective(t, Head::class_probs, LossConfig::cross_entropy());
  ClassifierModel m(Head::class_probs, 2, 3, 0, 1);
  m.layers[0].weight.setZero();
  m.layers[0].bias.setZero();
  const auto b = predict(m, d, objective, 3);
  for (const auto& r : b.rankings) CHECK(r == std::vector<int>{0, 1, 2});
  const auto report = evaluate(m, d, t, objective, {1, 2});
  CHECK(report.top_k_error.at(1) == Approx(2.0 / 3));
  CHECK(report.hier_dist_mistake == 1.5);
  CHECK(report.avg_hier_dist_topk.at(2) == 1.0);
  CHECK_THROWS_AS(evaluate(m, d, t, objective, {4}), Error);
}

TEST_CASE("class head and unit-weight conditional head agree on separable data") {
  const Taxonomy t = make_balanced_tree(2, 2);
  const Dataset d = small_synth(t, 40, 0.05, 8);
  auto fit = [&](Head head) {
    const Objective objective(t, head, LossConfig::cross_entropy());
    ClassifierModel m(head, static_cast<int>(d.feature_dim()), objective.output_dim(), 0, 3);
    auto opt = OptimizerState::for_model(m, {1e-2});
    train(m, d, d, objective, t, opt, {3000, 32, 1000, 3}, {1});
    return predict(m, d, objective, 1);
  };
  const auto a = fit(Head::class_probs);
  const auto c = fit(Head::conditional_probs);
  CHECK(top_k_error(a, 1) == 0.0);
  CHECK(a.rankings == c.rankings);
}

TEST_CASE("objective construction") {
  const Taxonomy t = small_tree();
  CHECK_THROWS_AS(Objective(t, Head::conditional_probs, LossConfig::soft(4.0)), Error);
  CHECK(Objective(t, Head::conditional_probs, LossConfig::hxe(0.0)).output_dim() == 4);
  CHECK(Objective(t, Head::class_probs, LossConfig::hxe(0.0)).output_dim() == 3);
  CHECK(parse_head("conditional") == Head::conditional_probs);
  CHECK_THROWS_AS(parse_head("tree"), Error);
  CHECK(parse_loss_kind("soft") == LossConfig::Kind::soft);
  CHECK_THROWS_AS(parse_loss_kind("focal"), Error);
}

TEST_CASE("non-finite loss raises TrainingDiverged") {
  const Taxonomy t = two_class_tree();
  Dataset d = separable_two_class(10, 1);
  d.features(3, 0) = std::numeric_limits<double>::infinity();
  const Objective objective(t, Head::class_probs, LossConfig::cross_entropy());
  ClassifierModel m(Head::class_probs, 2, 2, 0, 1);
  auto opt = OptimizerState::for_model(m);
  CHECK_THROWS_AS(train(m, d, separable_two_class(5, 2), objective, t, opt, {50, 20, 10, 0}, {1}), TrainingDiverged);
}

TEST_CASE("checkpoint text round-trips") {
  for (int hidden : {0, 4}) {
    ClassifierModel m(Head::conditional_probs, 3, 5, hidden, 11);
    const std::string text = checkpoint_text(m, "00ff", 1500);
    const auto back = parse_checkpoint(text);
    CHECK(back.taxonomy_hash == "00ff");
    CHECK(back.model.head == Head::conditional_probs);
    REQUIRE(back.model.layers.size() == m.layers.size());
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      CHECK(back.model.layers[i].weight == m.layers[i].weight);
      CHECK(back.model.layers[i].bias == m.layers[i].bias);
    }
    CHECK(checkpoint_text(back.model, "00ff", 1500) == text);
  }
  CHECK_THROWS_AS(parse_checkpoint("head,class\nlayer,2,2\nw,1,2\nb,0,0\n"), ParseError);
  CHECK_THROWS_AS(parse_checkpoint("head,class\n"), ParseError);
}

TEST_CASE("quartic fit recovers coefficients") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd c(5);
    for (int i = 0; i < 5; ++i) c[i] = u(rng);
    const int n = 5 + static_cast<int>(rng() % 40);
    Eigen::VectorXd x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = -1.0 + 2.0 * i / (n - 1);
      y[i] = poly(c, x[i]);
    }
    const Eigen::VectorXd fit = fit_polynomial(x, y, 4);
    // normal equations in extended precision
    using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    LMat v(n, 5);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 5; ++j) v(i, j) = std::pow(static_cast<long double>(x[i]), j);
    const Vector<long double> oracle = (v.transpose() * v).ldlt().solve(v.transpose() * y.cast<long double>());
    for (int j = 0; j < 5; ++j) {
      REQUIRE(std::abs(fit[j] - c[j]) <= 1e-8 * std::max(1.0, std::abs(c[j])));
      REQUIRE(std::abs(fit[j] - static_cast<double>(oracle[j])) <= 1e-8 * std::max(1.0, std::abs(c[j])));
    }
  }
  CHECK_THROWS_AS(fit_polynomial(Eigen::VectorXd::Ones(6), Eigen::VectorXd::Ones(6), 4), Error);
}

TEST_CASE("checkpoint window selection") {
  auto steps_for = [](int n) {
    std::vector<double> s;
    for (int i = 1; i <= n; ++i) s.push_back(500.0 * i);
    return s;
  };
  SUBCASE("convex quartic with interior minimum") {
    for (int j = 2; j <= 27; ++j) {
      const auto s = steps_for(30);
      std::vector<double> loss;
      for (double x : s) loss.push_back(std::pow((x - s[j]) / 1000.0, 4) + 0.5 * std::pow((x - s[j]) / 1000.0, 2) + 1.0);
      CHECK(select_window(s, loss) == std::vector<int>{j - 2, j - 1, j, j + 1, j + 2});
    }
  }
  SUBCASE("decreasing losses anchor at the end") {
    const auto s = steps_for(20);
    std::vector<double> loss;
    for (double x : s) loss.push_back(1.0 / x);
    CHECK(select_window(s, loss) == std::vector<int>{15, 16, 17, 18, 19});
  }
  SUBCASE("increasing losses anchor at the start") {
    const auto s = steps_for(12);
    std::vector<double> loss;
    for (double x : s) loss.push_back(x);
    CHECK(select_window(s, loss) == std::vector<int>{0, 1, 2, 3, 4});
  }
  SUBCASE("minimum next to an end is clipped") {
    const auto s = steps_for(10);
    std::vector<double> loss;
    for (double x : s) loss.push_back(std::pow(x - s[1], 2));
    CHECK(select_window(s, loss) == std::vector<int>{0, 1, 2, 3, 4});
    std::vector<double> late;
    for (double x : s) late.push_back(std::pow(x - s[8], 2));
    CHECK(select_window(s, late) == std::vector<int>{5, 6, 7, 8, 9});
  }
  SUBCASE("exactly five checkpoints") {
    CHECK(select_window(steps_for(5), {3, 2, 1, 2, 3}) == std::vector<int>{0, 1, 2, 3, 4});
    CHECK_THROWS_AS(select_window(steps_for(4), {3, 2, 1, 2}), Error);
  }
  SUBCASE("early checkpoints are discarded") {
    TrainingTrace trace;
    for (int i = 1; i <= 40; ++i) {
      Checkpoint c;
      c.step = 500 * i;
      // global minimum sits before the discard point
      c.val_loss = c.step < 5000 ? 0.0 : std::pow((c.step - 12000) / 1000.0, 2);
      trace.checkpoints.push_back(c);
    }
    CHECK(select_checkpoints(trace, 5000) == std::vector<int>{21, 22, 23, 24, 25});
    CHECK_THROWS_AS(select_checkpoints(trace, 19000), Error);
  }
}
