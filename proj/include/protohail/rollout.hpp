#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "protohail/policy.hpp"
#include "protohail/sim_cloud.hpp"

namespace protohail {

/// A policy driven step by step across many entities at once.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  /// Starts a new episode for `entities` parallel entities.
  virtual void reset(std::size_t entities) = 0;
  /// One rate in [0,1] per entity for the current step.
  virtual std::vector<double> act(std::span<const std::vector<double>> states) = 0;
};

/// Shared machinery for encoder-based policies: keeps each entity's hidden
/// state and feeds the controller's own previous action back in.
class RecurrentController : public Controller {
 public:
  void reset(std::size_t entities) override;
  std::vector<double> act(std::span<const std::vector<double>> states) override;

 protected:
  virtual const EncoderParams& encoder() const = 0;
  /// Rates for each row of the hidden-state batch.
  virtual std::vector<double> head(const Tensor& hidden) const = 0;

 private:
  Tensor hidden_;
  std::vector<double> previous_;
};

class PrototypeController final : public RecurrentController {
 public:
  explicit PrototypeController(const PolicyModel& model, std::string label = "ProtoHAIL")
      : model_(model), label_(std::move(label)) {}
  std::string name() const override { return label_; }

 protected:
  const EncoderParams& encoder() const override { return model_.encoder; }
  std::vector<double> head(const Tensor& hidden) const override;

 private:
  const PolicyModel& model_;
  std::string label_;
};

/// Drives `c` over every step. All entities must have the same length; the
/// result is indexed [entity][step].
RateMatrix rollout(Controller& c, std::span<const Trajectory> entities);

}  // namespace protohail
