#include <cmath>
#include <random>

#include "doctest.h"
#include "protohail/encoder.hpp"
#include "protohail/numerics.hpp"
#include "test_helpers.hpp"

using namespace protohail;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-loop GRU step used as an oracle for the tape implementation.
std::vector<double> reference_step(const EncoderParams& p, const std::vector<double>& h,
                                   const std::vector<double>& x) {
  const std::size_t m = p.hidden;
  std::vector<double> gx(3 * m, 0.0), gh(2 * m, 0.0), out(m);
  for (std::size_t c = 0; c < 3 * m; ++c) {
    gx[c] = p.b_input(0, c);
    for (std::size_t i = 0; i < x.size(); ++i) gx[c] += x[i] * p.w_input(i, c);
  }
  for (std::size_t c = 0; c < 2 * m; ++c)
    for (std::size_t i = 0; i < m; ++i) gh[c] += h[i] * p.w_hidden_zr(i, c);
  for (std::size_t k = 0; k < m; ++k) {
    const double z = sigm(gx[k] + gh[k]);
    double rn = 0.0;
    for (std::size_t i = 0; i < m; ++i) rn += sigm(gx[m + i] + gh[m + i]) * h[i] * p.w_hidden_n(i, k);
    const double n = std::tanh(gx[2 * m + k] + rn);
    out[k] = (1.0 - z) * n + z * h[k];
  }
  return out;
}

std::vector<double> reference_encode(const EncoderParams& p, const Trajectory& tr) {
  std::vector<double> h(p.hidden, 0.0);
  for (std::size_t t = 0; t < tr.length(); ++t) {
    std::vector<double> x(p.input_width());
    p.normalizer.apply(tr.steps[t].state, std::span<double>(x).first(p.state_width));
    x[p.state_width] = t == 0 ? 0.0 : tr.steps[t - 1].action.value_or(0.0);
    h = reference_step(p, h, x);
  }
  return h;
}

}  // namespace

TEST_CASE("length-1 trajectory is one step from the zero state") {
  std::mt19937_64 rng(1);
  const EncoderParams p = EncoderParams::init(3, 8, 5);
  const Trajectory tr = testutil::random_trajectory(1, 3, rng);
  const Tensor h = encode(tr, p);
  const auto ref = reference_step(p, std::vector<double>(8, 0.0),
                                  {tr.steps[0].state[0], tr.steps[0].state[1],
                                   tr.steps[0].state[2], 0.0});
  REQUIRE(h.cols() == 8);
  for (std::size_t k = 0; k < 8; ++k) CHECK(h[k] == doctest::Approx(ref[k]).epsilon(1e-12));
}

TEST_CASE("encode matches a scalar-loop GRU oracle") {
  std::mt19937_64 rng(2);
  EncoderParams p = EncoderParams::init(4, 16, 9);
  const Trajectory tr = testutil::random_trajectory(7, 4, rng);
  std::vector<Trajectory> data{tr};
  p.normalizer = Normalizer::fit(data);
  const Tensor h = encode(tr, p);
  const auto ref = reference_encode(p, tr);
  for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(h[k] - ref[k]) < 1e-12);
}

TEST_CASE("identical trajectories give identical embeddings") {
  std::mt19937_64 rng(3);
  const EncoderParams p = EncoderParams::init(5, 12, 1);
  const Trajectory a = testutil::random_trajectory(6, 5, rng);
  const Trajectory b = a;
  CHECK(encode(a, p) == encode(b, p));
}

TEST_CASE("prefix consistency") {
  std::mt19937_64 rng(4);
  const EncoderParams p = EncoderParams::init(3, 10, 2);
  const Trajectory tr = testutil::random_trajectory(9, 3, rng);
  const Tensor all = encode_all_prefixes(tr, p);
  REQUIRE(all.rows() == tr.length());
  const Tensor full = encode(tr, p);
  for (std::size_t c = 0; c < 10; ++c) CHECK(all(8, c) == full[c]);
  std::uniform_int_distribution<std::size_t> pick(1, tr.length());
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t k = pick(rng);
    const Tensor direct = encode(tr.prefix(k), p);
    for (std::size_t c = 0; c < 10; ++c) CHECK(std::abs(all(k - 1, c) - direct[c]) <= 1e-12);
  }
}

TEST_CASE("batched encoding equals per-trajectory encoding across mixed lengths") {
  std::mt19937_64 rng(5);
  const EncoderParams p = EncoderParams::init(2, 6, 3);
  std::vector<Trajectory> trs;
  for (std::size_t len : {4u, 2u, 4u, 1u, 3u}) trs.push_back(testutil::random_trajectory(len, 2, rng));
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : trs) ptrs.push_back(&t);
  ad::Tape tape;
  const EncoderVars vars = bind_encoder(tape, p, false);
  const EncodedBatch batch = encode_batch(tape, vars, p, ptrs);
  for (std::size_t i = 0; i < trs.size(); ++i) {
    const Tensor single = encode_all_prefixes(trs[i], p);
    for (std::size_t k = 0; k < trs[i].length(); ++k)
      for (std::size_t c = 0; c < 6; ++c)
        CHECK(batch.prefixes.value()(batch.offsets[i] + k, c) == single(k, c));
    const Tensor fin = encode(trs[i], p);
    for (std::size_t c = 0; c < 6; ++c) CHECK(batch.finals.value()(i, c) == fin[c]);
  }
}

TEST_CASE("width mismatch and invalid actions are contract violations") {
  std::mt19937_64 rng(6);
  const EncoderParams p = EncoderParams::init(3, 4, 1);
  CHECK_THROWS_AS(encode(testutil::random_trajectory(2, 4, rng), p), ContractViolation);
  Trajectory bad = testutil::random_trajectory(2, 3, rng);
  bad.steps[1].action = 1.5;
  CHECK_THROWS_AS(encode(bad, p), ContractViolation);
  CHECK_THROWS_AS(encode(Trajectory{}, p), ContractViolation);
}

TEST_CASE("hidden state bounded for large inputs") {
  const EncoderParams p = EncoderParams::init(3, 8, 4);
  Trajectory tr;
  for (int t = 0; t < 20; ++t) tr.steps.push_back({{1e3, -1e3, 1e3}, 1.0});
  const Tensor h = encode(tr, p);
  for (double v : h.flat()) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= 1.0);
  }
}

TEST_CASE("encoder gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    EncoderParams p = EncoderParams::init(3, 5, seed);
    const Trajectory tr = testutil::random_trajectory(5, 3, rng);
    const Tensor target = testutil::random_tensor(1, 5, rng);
    LossFn f = [&](ad::Tape& tape, std::span<const ad::Var> v) {
      EncoderVars enc{v[0], v[1], v[2], v[3], 5};
      const Trajectory* one[] = {&tr};
      const EncodedBatch b = encode_batch(tape, enc, p, one);
      ad::Var diff = ad::sub(b.prefixes, tape.constant(target));
      return ad::mean(ad::square(diff));
    };
    const std::vector<Tensor> params{p.w_input, p.b_input, p.w_hidden_zr, p.w_hidden_n};
    const auto g = grad(f, params);
    const auto fd = finite_diff_grad(f, params);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(relative_error(g[i], fd[i]) < 1e-4);
  }
}
