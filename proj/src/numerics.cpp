#include "protohail/numerics.hpp"

#include <cmath>
#include <numeric>

namespace protohail {

namespace {

std::vector<ad::Var> bind_params(ad::Tape& tape, std::span<const Tensor> params) {
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.leaf(p));
  return vars;
}

double l2(const Tensor& t) {
  double s = 0.0;
  for (double v : t.flat()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

std::vector<Tensor> grad(const LossFn& loss_fn, std::span<const Tensor> params) {
  ad::Tape tape;
  const auto vars = bind_params(tape, params);
  ad::Var loss = loss_fn(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = vars[i].grad();
    out.push_back(g.empty() ? Tensor(params[i].rows(), params[i].cols()) : g);
  }
  return out;
}

double evaluate_loss(const LossFn& loss_fn, std::span<const Tensor> params) {
  ad::Tape tape;
  const auto vars = bind_params(tape, params);
  return loss_fn(tape, vars).item();
}

std::vector<Tensor> finite_diff_grad(const LossFn& loss_fn, std::span<const Tensor> params,
                                     double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ContractViolation("finite_diff_grad: eps must lie in [1e-7, 1e-3]");
  }
  std::vector<Tensor> work(params.begin(), params.end());
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t p = 0; p < work.size(); ++p) {
    Tensor g(work[p].rows(), work[p].cols());
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double orig = work[p][i];
      work[p][i] = orig + eps;
      const double up = evaluate_loss(loss_fn, work);
      work[p][i] = orig - eps;
      const double down = evaluate_loss(loss_fn, work);
      work[p][i] = orig;
      g[i] = (up - down) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

double relative_error(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ContractViolation("relative_error shape mismatch");
  Tensor d(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double denom = std::max(l2(a), l2(b));
  if (denom < 1e-10) return l2(d);
  return l2(d) / denom;
}

OptimizerState::OptimizerState(AdamConfig cfg, std::span<const Tensor* const> params)
    : config(cfg) {
  for (const Tensor* p : params) {
    first_moment.emplace_back(p->rows(), p->cols());
    second_moment.emplace_back(p->rows(), p->cols());
  }
}

void OptimizerState::reset_slot(std::size_t slot, const Tensor& param) {
  if (slot >= first_moment.size()) throw ContractViolation("reset_slot: no such slot");
  first_moment[slot] = Tensor(param.rows(), param.cols());
  second_moment[slot] = Tensor(param.rows(), param.cols());
}

void optimizer_step(OptimizerState& state, std::span<Tensor* const> params,
                    std::span<const Tensor> grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ContractViolation("optimizer_step: parameter/gradient/slot count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.first_moment[i])) {
      throw ContractViolation("optimizer_step: shape mismatch in slot " + std::to_string(i) +
                              ": param " + shape_string(*params[i]) + ", grad " +
                              shape_string(grads[i]) + ", moment " +
                              shape_string(state.first_moment[i]));
    }
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

double shannon_entropy(std::span<const double> p) {
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw ContractViolation("shannon_entropy: negative or NaN probability");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ContractViolation("shannon_entropy: probabilities sum to " + std::to_string(total));
  }
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return std::max(0.0, h);
}

}  // namespace protohail
