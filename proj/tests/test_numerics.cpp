#include <cmath>
#include <random>

#include "doctest.h"
#include "protohail/autodiff.hpp"
#include "protohail/numerics.hpp"
#include "test_helpers.hpp"

using namespace protohail;

namespace {

double max_rel(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

}  // namespace

TEST_CASE("grad of x^2 at 3 is 6") {
  LossFn f = [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::square(p[0])); };
  const std::vector<Tensor> x{Tensor::scalar(3.0)};
  CHECK(grad(f, x)[0][0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("grad of a constant is zero") {
  LossFn f = [](ad::Tape& tape, std::span<const ad::Var>) {
    return tape.constant(Tensor::scalar(4.2));
  };
  const std::vector<Tensor> x{Tensor(2, 3, 1.0)};
  const auto g = grad(f, x);
  REQUIRE(g[0].same_shape(x[0]));
  for (double v : g[0].flat()) CHECK(v == 0.0);
}

TEST_CASE("finite differences on simple functions") {
  LossFn sq = [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::square(p[0])); };
  LossFn sg = [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::sigmoid(p[0])); };
  const std::vector<Tensor> three{Tensor::scalar(3.0)};
  const std::vector<Tensor> zero{Tensor::scalar(0.0)};
  CHECK(std::abs(finite_diff_grad(sq, three, 1e-5)[0][0] - 6.0) < 1e-6);
  CHECK(std::abs(finite_diff_grad(sg, zero, 1e-5)[0][0] - 0.25) < 1e-6);
  CHECK_THROWS_AS(finite_diff_grad(sq, three, 1e-2), ContractViolation);
  CHECK_THROWS_AS(finite_diff_grad(sq, three, 1e-9), ContractViolation);
}

TEST_CASE("non-finite output names the primitive") {
  LossFn f = [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::exp(p[0])); };
  const std::vector<Tensor> big{Tensor::scalar(1000.0)};
  try {
    (void)grad(f, big);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.primitive() == "exp");
  }
}

TEST_CASE("every primitive matches finite differences") {
  // Composite touching each op, checked on several seeds and broadcast forms.
  LossFn f = [](ad::Tape& tape, std::span<const ad::Var> p) {
    ad::Var a = p[0];  // 3x4
    ad::Var b = p[1];  // 4x2
    ad::Var row = p[2];  // 1x4
    ad::Var col = p[3];  // 3x1
    ad::Var x = ad::add(a, row);
    x = ad::mul(x, col);
    x = ad::sub(x, ad::scale(ad::tanh(a), 0.5));
    ad::Var y = ad::matmul(x, b);                       // 3x2
    ad::Var z = ad::add(ad::matmul_bt(y, b), ad::matmul(y, ad::transpose(b)));  // 3x4
    ad::Var s = ad::sigmoid(ad::add_scalar(z, 0.1));
    ad::Var l = ad::log_clamped(ad::one_minus(ad::scale(s, 0.9)));
    ad::Var parts[] = {ad::slice_rows(l, 0, 2), ad::slice_rows(ad::exp(ad::scale(l, 0.3)), 2, 3)};
    ad::Var stacked = ad::concat_rows(parts);
    ad::Var cols[] = {ad::slice_cols(stacked, 1, 3), ad::slice_cols(stacked, 0, 1)};
    ad::Var joined = ad::concat_cols(cols);
    ad::Var g = ad::gather_rows(joined, {2, 0, 2, 1});
    ad::Var scalar = tape.constant(Tensor::scalar(0.7));
    return ad::add(ad::mean(ad::square(ad::row_sum(g))), ad::mul(ad::sum(g), scalar));
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::vector<Tensor> params{testutil::random_tensor(3, 4, rng),
                                     testutil::random_tensor(4, 2, rng),
                                     testutil::random_tensor(1, 4, rng),
                                     testutil::random_tensor(3, 1, rng)};
    CHECK(max_rel(grad(f, params), finite_diff_grad(f, params)) < 1e-4);
  }
}

TEST_CASE("log_clamped gradient is zero below the floor") {
  LossFn f = [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::log_clamped(p[0])); };
  const std::vector<Tensor> x{Tensor(1, 2, std::vector<double>{0.0, 0.5})};
  const auto g = grad(f, x);
  CHECK(g[0][0] == 0.0);
  CHECK(g[0][1] == doctest::Approx(2.0));
}

TEST_CASE("adam: zero gradient leaves params and moments untouched") {
  Tensor p(2, 2, 1.5);
  Tensor* ptrs[] = {&p};
  const Tensor* cptrs[] = {&p};
  OptimizerState st(AdamConfig{}, cptrs);
  const std::vector<Tensor> g{Tensor(2, 2)};
  optimizer_step(st, ptrs, g);
  CHECK(st.step == 1);
  for (double v : p.flat()) CHECK(v == 1.5);
  for (double v : st.first_moment[0].flat()) CHECK(v == 0.0);
  for (double v : st.second_moment[0].flat()) CHECK(v == 0.0);
}

TEST_CASE("adam: first step opposes the gradient") {
  Tensor x = Tensor::scalar(0.0);
  Tensor* ptrs[] = {&x};
  const Tensor* cptrs[] = {&x};
  OptimizerState st(AdamConfig{}, cptrs);
  const std::vector<Tensor> g{Tensor::scalar(1.0)};  // d/dx of f(x)=x
  optimizer_step(st, ptrs, g);
  CHECK(x[0] < 0.0);
  CHECK(x[0] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("adam converges on (x-2)^2") {
  Tensor x = Tensor::scalar(0.0);
  Tensor* ptrs[] = {&x};
  const Tensor* cptrs[] = {&x};
  OptimizerState st(AdamConfig{}, cptrs);
  LossFn f = [](ad::Tape&, std::span<const ad::Var> p) {
    return ad::sum(ad::square(ad::add_scalar(p[0], -2.0)));
  };
  for (int i = 0; i < 500; ++i) {
    const std::vector<Tensor> cur{x};
    optimizer_step(st, ptrs, grad(f, cur));
  }
  CHECK(st.step == 500);
  CHECK(std::abs(x[0] - 2.0) < 0.05);
}

TEST_CASE("adam is deterministic and rejects shape mismatch") {
  Tensor a = Tensor::scalar(0.3), b = Tensor::scalar(0.3);
  Tensor* pa[] = {&a};
  Tensor* pb[] = {&b};
  const Tensor* ca[] = {&a};
  OptimizerState sa(AdamConfig{}, ca), sb(AdamConfig{}, ca);
  const std::vector<Tensor> g{Tensor::scalar(-0.7)};
  optimizer_step(sa, pa, g);
  optimizer_step(sb, pb, g);
  CHECK(a == b);
  const std::vector<Tensor> wrong{Tensor(1, 2)};
  CHECK_THROWS_AS(optimizer_step(sa, pa, wrong), ContractViolation);
}

TEST_CASE("shannon entropy") {
  const double uniform4[] = {0.25, 0.25, 0.25, 0.25};
  const double onehot[] = {0.0, 1.0, 0.0};
  const double mixed[] = {0.5, 0.25, 0.25};
  CHECK(shannon_entropy(uniform4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(shannon_entropy(onehot) == 0.0);
  // 0.5 ln 2 + 2 * 0.25 ln 4 = 1.5 ln 2
  CHECK(std::abs(shannon_entropy(mixed) - 1.0397) < 1e-4);
  CHECK(shannon_entropy(mixed) == doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-12));
  const double bad[] = {0.5, 0.6};
  const double negative[] = {1.2, -0.2};
  CHECK_THROWS_AS(shannon_entropy(bad), ContractViolation);
  CHECK_THROWS_AS(shannon_entropy(negative), ContractViolation);
}

TEST_CASE("entropy stays within [0, ln n] on random simplices") {
  std::mt19937_64 rng(11);
  std::exponential_distribution<double> e(1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 9;
    std::vector<double> p(n);
    double s = 0.0;
    for (double& v : p) s += (v = e(rng));
    for (double& v : p) v /= s;
    // renormalize the tail so the sum is 1 to rounding
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) acc += p[i];
    p[n - 1] = std::max(0.0, 1.0 - acc);
    const double h = shannon_entropy(p);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(n)) + 1e-12);
  }
}
