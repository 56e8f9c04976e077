#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "protohail/baselines.hpp"
#include "protohail/numerics.hpp"
#include "protohail/rollout.hpp"
#include "protohail/sim_cloud.hpp"
#include "test_helpers.hpp"

using namespace protohail;

namespace {

GridPoint cloud_point(const cloud::Fleet& f, double r) {
  const RateMatrix rates(f.services.size(), std::vector<double>(f.hours(), r));
  const cloud::CloudOutcome o = cloud::evaluate(f, rates);
  return {r, o.hot_node_rate, static_cast<double>(o.remain_cores)};
}

}  // namespace

TEST_CASE("grid search") {
  auto fake = [](double r) { return GridPoint{r, r < 0.5 ? 1.0 - r : 0.0, r < 0.5 ? 0.0 : 1.0 - r}; };
  const std::vector<double> only{1.0};
  CHECK(grid_search(only, fake).best.rate == 1.0);

  auto grid = default_rate_grid();
  REQUIRE(grid.size() == 21);
  CHECK(grid[1] == 0.05);
  const GridResult r = grid_search(grid, fake);
  CHECK(r.best.rate == 0.5);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(grid.begin(), grid.end(), rng);
    CHECK(grid_search(grid, fake).best.rate == 0.5);
  }
  CHECK_THROWS_AS(grid_search(std::vector<double>{}, fake), ContractViolation);
  CHECK_THROWS_AS(grid_search(std::vector<double>{1.5}, fake), ContractViolation);
}

TEST_CASE("grid search on the synthetic cloud fleet") {
  const cloud::Fleet f = cloud::generate_fleet(1, cloud::FleetConfig{});
  const auto grid = default_rate_grid();
  const GridResult r = grid_search(grid, [&](double a) { return cloud_point(f, a); });
  CHECK(r.best.risk == 0.0);
  for (const GridPoint& p : r.points) CHECK(!lexicographically_better(cloud_point(f, p.rate), r.best));
  CHECK(grid_search(std::vector<double>{1.0}, [&](double a) { return cloud_point(f, a); }).best.risk == 0.0);
}

TEST_CASE("moving average") {
  const std::vector<double> flat(30, 0.4);
  CHECK(moving_average(flat, 24) == doctest::Approx(0.4));
  const std::vector<double> two{0.2, 0.6};
  CHECK(moving_average(two, 2) == doctest::Approx(0.4));
  CHECK(moving_average(two, 10) == doctest::Approx(0.4));
  CHECK(moving_average(std::vector<double>{0.9, 0.1}, 1) == 0.1);
  CHECK(moving_average({}, 3) == 1.0);
  CHECK_THROWS_AS(moving_average(two, 0), ContractViolation);
}

TEST_CASE("moving average lags peaks on the synthetic fleet") {
  const cloud::Fleet f = cloud::generate_fleet(1, cloud::FleetConfig{});
  const auto trajs = cloud::expert_trajectories(f);
  MovingAverageController ma(24, cloud::kPreviousUsageFeature);
  const RateMatrix r = rollout(ma, trajs);
  for (const auto& row : r)
    for (double a : row) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
  CHECK(cloud::evaluate(f, r).hot_node_rate > 0.0);
}

TEST_CASE("plain BC gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    BcModel m = BcModel::init(2, 3, 4, seed);
    std::vector<Trajectory> data;
    for (int i = 0; i < 3; ++i) data.push_back(testutil::random_trajectory(2 + i, 2, rng));
    LossFn f = [&](ad::Tape& tape, std::span<const ad::Var> v) { return bc_mlp_objective(tape, v, m, data); };
    std::vector<Tensor> params;
    for (const Tensor* t : m.parameters()) params.push_back(*t);
    const auto g = grad(f, params);
    const auto fd = finite_diff_grad(f, params);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(relative_error(g[i], fd[i]) < 1e-4);
  }
}

TEST_CASE("plain BC fits labels its own architecture can produce") {
  std::mt19937_64 rng(3);
  BcModel teacher = BcModel::init(2, 8, 16, 99);
  for (double& w : teacher.w2.flat()) w *= 3.0;
  std::vector<Trajectory> data;
  for (int i = 0; i < 6; ++i) data.push_back(testutil::random_trajectory(12, 2, rng));
  BcController tc(teacher);
  const RateMatrix labels = rollout(tc, data);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t t = 0; t < data[i].length(); ++t) data[i].steps[t].action = labels[i][t];
  BcModel student = teacher;
  student.imitation = ImitationLoss::SquaredError;
  const double at_teacher = bc_mlp_loss(student, data);
  CHECK(at_teacher < 1e-20);

  BcModel fresh = BcModel::init(2, 8, 16, 7);
  fresh.imitation = ImitationLoss::SquaredError;
  std::vector<double> log;
  fit_plain_bc(fresh, data, FitOptions{.epochs = 400, .learning_rate = 1e-2, .seed = 1}, &log);
  CHECK(log.back() < 0.05 * log.front());
  CHECK(log.back() < 2e-3);
}

TEST_CASE("plain BC training is deterministic") {
  std::mt19937_64 rng(8);
  std::vector<Trajectory> data;
  for (int i = 0; i < 5; ++i) data.push_back(testutil::random_trajectory(6, 3, rng));
  const FitOptions opt{.epochs = 15, .learning_rate = 1e-2, .batch_size = 2, .seed = 4};
  const BcModel a = train_plain_bc(data, 8, 16, ImitationLoss::CrossEntropy, opt);
  const BcModel b = train_plain_bc(data, 8, 16, ImitationLoss::CrossEntropy, opt);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);
}

TEST_CASE("closed-loop rollouts agree with prefix evaluation") {
  std::mt19937_64 rng(12);
  std::vector<Trajectory> data;
  for (int i = 0; i < 4; ++i) data.push_back(testutil::random_trajectory(9, 3, rng));

  const BcModel bc = BcModel::init(3, 6, 8, 5);
  BcController bcc(bc);
  const RateMatrix r = rollout(bcc, data);

  PolicyModel pm;
  pm.encoder = EncoderParams::init(3, 6, 6);
  pm.protos.embeddings = testutil::random_tensor(3, 6, rng);
  pm.protos.members.assign(3, {});
  pm.protos.nearest_expert.assign(3, 0);
  pm.head.weights = testutil::random_tensor(3, 1, rng);
  pm.head.bias = Tensor(1, 1, 0.2);
  PrototypeController pc(pm);
  const RateMatrix rp = rollout(pc, data);

  for (std::size_t i = 0; i < data.size(); ++i) {
    Trajectory fed = data[i], fed_p = data[i];
    for (std::size_t t = 0; t < fed.length(); ++t) {
      fed.steps[t].action = r[i][t];
      fed_p.steps[t].action = rp[i][t];
    }
    const auto a = act_all_prefixes(fed, bc);
    const auto ap = act_all_prefixes(fed_p, pm);
    for (std::size_t t = 0; t < fed.length(); ++t) {
      CHECK(std::abs(a[t] - r[i][t]) < 1e-12);
      CHECK(std::abs(ap[t] - rp[i][t]) < 1e-12);
    }
  }
  std::vector<Trajectory> ragged{data[0], testutil::random_trajectory(3, 3, rng)};
  CHECK_THROWS_AS(rollout(bcc, ragged), ContractViolation);
}
