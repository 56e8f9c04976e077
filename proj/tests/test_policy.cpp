#include <cmath>
#include <random>

#include "doctest.h"
#include "protohail/numerics.hpp"
#include "protohail/policy.hpp"
#include "test_helpers.hpp"

using namespace protohail;

namespace {

PolicyModel random_model(std::uint64_t seed, std::size_t d, std::size_t m, std::size_t k) {
  std::mt19937_64 rng(seed);
  PolicyModel model;
  model.encoder = EncoderParams::init(d, m, seed);
  model.protos.embeddings = testutil::random_tensor(k, m, rng);
  model.protos.members.assign(k, {});
  model.protos.nearest_expert.assign(k, 0);
  model.head = PolicyHead::zeros(k);
  model.head.weights = testutil::random_tensor(k, 1, rng, -2.0, 2.0);
  model.head.bias = testutil::random_tensor(1, 1, rng);
  return model;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("similarity") {
  Tensor p(2, 2, std::vector<double>{3, 4, 0, 0});
  const double h[] = {0.0, 0.0};
  const Tensor s = similarity(h, p);
  CHECK(s[0] == -25.0);
  CHECK(s[1] == 0.0);
  std::mt19937_64 rng(3);
  const Tensor p5 = testutil::random_tensor(5, 7, rng);
  const Tensor hv = testutil::random_tensor(1, 7, rng);
  const Tensor s5 = similarity(hv.flat(), p5);
  for (std::size_t k = 0; k < 5; ++k) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 7; ++c) acc += (hv[c] - p5(k, c)) * (hv[c] - p5(k, c));
    CHECK(s5[k] == doctest::Approx(-acc).epsilon(1e-14));
    CHECK(s5[k] <= 0.0);
  }
  ad::Tape tape;
  Tensor hp(1, 7);
  for (std::size_t c = 0; c < 7; ++c) hp[c] = p5(2, c);
  const Tensor taped = similarity(tape.constant(hp), tape.constant(p5)).value();
  CHECK(taped(0, 2) == 0.0);
}

TEST_CASE("act") {
  std::mt19937_64 rng(5);
  PolicyModel m = random_model(1, 3, 6, 3);
  const Trajectory tr = testutil::random_trajectory(4, 3, rng);
  m.head.weights.fill(0.0);
  m.head.bias.fill(0.0);
  CHECK(act(tr, m) == 0.5);
  m.head.bias.fill(10.0);
  CHECK(act(tr, m) > 0.9999);
  m.head.bias.fill(11.0);
  const double higher = act(tr, m);
  m.head.bias.fill(10.0);
  CHECK(higher > act(tr, m));
  PolicyModel bad = random_model(2, 3, 6, 3);
  bad.head = PolicyHead::zeros(2);
  CHECK_THROWS_AS(act(tr, bad), ContractViolation);
}

TEST_CASE("quadratic view equals the similarity logit") {
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 1000; ++trial) {
    std::mt19937_64 rng(trial);
    const PolicyModel m = random_model(trial, 2, 8, 1 + trial % 6);
    const QuadraticView q = quadratic_view(m);
    const Tensor h = testutil::random_tensor(1, 8, rng);
    worst = std::max(worst, std::abs(q.logit(h.flat()) - logit(h.flat(), m)));
    CHECK(std::abs(sigm(q.logit(h.flat())) - act_from_embedding(h.flat(), m)) < 1e-9);
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("quadratic view special cases") {
  PolicyModel m = random_model(3, 2, 4, 1);
  m.protos.embeddings.fill(0.0);
  m.head.weights.fill(1.0);
  m.head.bias.fill(0.25);
  const QuadraticView q = quadratic_view(m);
  CHECK(q.quadratic == -1.0);
  for (double v : q.linear.flat()) CHECK(v == 0.0);
  CHECK(q.constant == 0.25);
  CHECK(q.curvature_sign == 1);

  PolicyModel r = random_model(4, 2, 4, 3);
  r.head.bias.fill(0.0);
  const QuadraticView a = quadratic_view(r);
  for (double& w : r.head.weights.flat()) w *= 2.5;
  const QuadraticView b = quadratic_view(r);
  CHECK(b.quadratic == doctest::Approx(2.5 * a.quadratic));
  CHECK(b.constant == doctest::Approx(2.5 * a.constant));
  for (std::size_t i = 0; i < 4; ++i) CHECK(b.linear[i] == doctest::Approx(2.5 * a.linear[i]));
}

TEST_CASE("bc_loss") {
  std::mt19937_64 rng(8);
  PolicyModel m = random_model(5, 2, 4, 2);
  m.head.weights.fill(0.0);
  m.head.bias.fill(0.0);
  std::vector<Trajectory> data{testutil::random_trajectory(5, 2, rng)};
  for (Step& s : data[0].steps) s.action = 0.5;
  CHECK(bc_loss(m, data) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // hand-summed oracle over three steps
  PolicyModel r = random_model(6, 2, 4, 2);
  std::vector<Trajectory> three{testutil::random_trajectory(3, 2, rng)};
  const auto a = act_all_prefixes(three[0], r);
  double oracle = 0.0;
  for (std::size_t t = 0; t < 3; ++t) {
    const double y = *three[0].steps[t].action;
    oracle -= y * std::log(a[t]) + (1 - y) * std::log(1 - a[t]);
  }
  CHECK(std::abs(bc_loss(r, three) - oracle / 3.0) < 1e-10);

  three[0].steps[1].action.reset();
  CHECK_THROWS_AS(bc_loss(r, three), ContractViolation);
}

TEST_CASE("bc_loss is zero for saturated matches") {
  PolicyModel m = random_model(7, 2, 4, 1);
  m.head.weights.fill(0.0);
  m.head.bias.fill(60.0);  // a rounds to exactly 1
  Trajectory tr;
  tr.steps.push_back({{0.1, 0.2}, 1.0});
  std::vector<Trajectory> data{tr};
  CHECK(bc_loss(m, data) == 0.0);
}

TEST_CASE("bc head gradient vanishes at a realizable optimum") {
  // Every label equals the current prediction. Single-step trajectories keep
  // the labels out of the encoder input.
  std::mt19937_64 rng(10);
  PolicyModel m = random_model(8, 2, 4, 2);
  std::vector<Trajectory> data;
  for (int i = 0; i < 6; ++i) {
    data.push_back(testutil::random_trajectory(1, 2, rng));
    data.back().steps[0].action = act(data.back(), m);
  }
  const LossWeights w{0, 0, 0, 1};
  const auto res = evaluate_objective(m, data, w, nullptr, true);
  double norm = 0.0;
  for (std::size_t s : {kHeadWeightSlot, kHeadBiasSlot})
    for (double v : res.grads[s].flat()) norm += v * v;
  CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("full loss components and weights") {
  std::mt19937_64 rng(12);
  PolicyModel m = random_model(9, 3, 5, 3);
  std::vector<Trajectory> data;
  for (int i = 0; i < 6; ++i) data.push_back(testutil::random_trajectory(3 + i % 3, 3, rng));
  const LossBreakdown def = full_loss(m, data, LossWeights{});
  CHECK(def.total == doctest::Approx(0.8 * def.rep + 0.1 * def.div + 0.1 * def.intr + 1.0 * def.im).epsilon(1e-12));
  CHECK(std::abs(def.total - (0.8 * def.rep + 0.1 * def.div + 0.1 * def.intr + 1.0 * def.im)) < 1e-12);
  CHECK(full_loss(m, data, LossWeights{1, 0, 0, 0}).total == def.rep);
  CHECK(full_loss(m, data, LossWeights{0, 0, 0, 0}).total == 0.0);
  CHECK(def.im == doctest::Approx(bc_loss(m, data)).epsilon(1e-12));
  CHECK_THROWS_AS(full_loss(m, data, LossWeights{1.5, 0, 0, 0}), ContractViolation);
}

TEST_CASE("squared-error imitation switch") {
  std::mt19937_64 rng(13);
  PolicyModel m = random_model(10, 2, 4, 2);
  m.imitation = ImitationLoss::SquaredError;
  std::vector<Trajectory> data{testutil::random_trajectory(4, 2, rng)};
  const auto a = act_all_prefixes(data[0], m);
  double oracle = 0.0;
  for (std::size_t t = 0; t < 4; ++t) oracle += std::pow(a[t] - *data[0].steps[t].action, 2);
  CHECK(std::abs(bc_loss(m, data) - oracle / 4.0) < 1e-12);
}

TEST_CASE("full objective gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 40);
    PolicyModel m = random_model(seed, 2, 4, 3);
    std::vector<Trajectory> data;
    for (int i = 0; i < 4; ++i) data.push_back(testutil::random_trajectory(2 + i % 3, 2, rng));
    LossFn f = [&](ad::Tape& tape, std::span<const ad::Var> v) {
      return build_objective(tape, model_vars_from(v, 4), m, data, LossWeights{}, nullptr).total;
    };
    std::vector<Tensor> params;
    for (const Tensor* t : m.parameters()) params.push_back(*t);
    const auto g = grad(f, params);
    const auto fd = finite_diff_grad(f, params);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(relative_error(g[i], fd[i]) < 1e-4);
  }
}
