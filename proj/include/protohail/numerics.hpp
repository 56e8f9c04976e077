#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "protohail/autodiff.hpp"
#include "protohail/tensor.hpp"

namespace protohail {

/// Builds a scalar loss on `tape` from leaf variables bound to the parameters.
using LossFn = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> params)>;

/// Reverse-mode gradient of `loss_fn` with respect to each parameter tensor.
std::vector<Tensor> grad(const LossFn& loss_fn, std::span<const Tensor> params);

/// Forward evaluation only.
double evaluate_loss(const LossFn& loss_fn, std::span<const Tensor> params);

/// Central-difference estimate (f(x+eps) - f(x-eps)) / (2 eps) per coordinate.
/// Independent of the backward rules: it only ever runs forward passes.
std::vector<Tensor> finite_diff_grad(const LossFn& loss_fn, std::span<const Tensor> params,
                                     double eps = 1e-6);

/// ||a - b|| / max(||a||, ||b||), or the absolute difference norm when both are ~0.
double relative_error(const Tensor& a, const Tensor& b);

struct AdamConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators for Adam, one slot per parameter tensor.
struct OptimizerState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  OptimizerState() = default;
  OptimizerState(AdamConfig cfg, std::span<const Tensor* const> params);

  /// Re-zeroes a slot whose parameter changed shape (prototype merge/split).
  void reset_slot(std::size_t slot, const Tensor& param);
};

/// One bias-corrected Adam update, in place.
void optimizer_step(OptimizerState& state, std::span<Tensor* const> params,
                    std::span<const Tensor> grads);

/// -sum p_i ln p_i with 0 ln 0 = 0. `p` must be a probability vector.
double shannon_entropy(std::span<const double> p);

}  // namespace protohail
