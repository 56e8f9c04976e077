#include "protohail/rollout.hpp"

namespace protohail {

void RecurrentController::reset(std::size_t entities) {
  hidden_ = Tensor(entities, encoder().hidden);
  previous_.assign(entities, 0.0);
}

std::vector<double> RecurrentController::act(std::span<const std::vector<double>> states) {
  if (states.size() != previous_.size()) throw ContractViolation("controller: entity count changed mid-episode");
  hidden_ = encoder_step(encoder(), hidden_, encoder_inputs(encoder(), states, previous_));
  previous_ = head(hidden_);
  return previous_;
}

std::vector<double> PrototypeController::head(const Tensor& hidden) const {
  std::vector<double> out(hidden.rows());
  for (std::size_t i = 0; i < hidden.rows(); ++i) out[i] = act_from_embedding(hidden.row_span(i), model_);
  return out;
}

RateMatrix rollout(Controller& c, std::span<const Trajectory> entities) {
  if (entities.empty()) throw ContractViolation("rollout: no entities");
  const std::size_t len = entities.front().length();
  for (const Trajectory& tr : entities)
    if (tr.length() != len) throw ContractViolation("rollout: entities must share one horizon");
  c.reset(entities.size());
  RateMatrix rates(entities.size(), std::vector<double>(len));
  std::vector<std::vector<double>> states(entities.size());
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t i = 0; i < entities.size(); ++i) states[i] = entities[i].steps[t].state;
    const std::vector<double> a = c.act(states);
    for (std::size_t i = 0; i < entities.size(); ++i) {
      if (!(a[i] >= 0.0 && a[i] <= 1.0)) {
        throw NumericError(c.name(), "rate " + std::to_string(a[i]) + " outside [0,1]");
      }
      rates[i][t] = a[i];
    }
  }
  return rates;
}

}  // namespace protohail
