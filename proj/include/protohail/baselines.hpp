#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "protohail/encoder.hpp"
#include "protohail/policy.hpp"
#include "protohail/rollout.hpp"

namespace protohail {

/// {0, 1/(n-1), ..., 1}; 21 points by default.
std::vector<double> default_rate_grid(std::size_t points = 21);

struct GridPoint {
  double rate = 0.0;
  double risk = 0.0;
  double benefit = 0.0;
};

struct GridResult {
  GridPoint best;
  std::vector<GridPoint> points;  // in grid order
};

/// Evaluates every rate and keeps the lowest risk, then the highest benefit,
/// then the higher rate.
GridResult grid_search(std::span<const double> grid, const std::function<GridPoint(double)>& evaluate);
bool lexicographically_better(const GridPoint& a, const GridPoint& b);

class ConstantController final : public Controller {
 public:
  explicit ConstantController(double rate);
  std::string name() const override { return "Grid-search"; }
  void reset(std::size_t entities) override { entities_ = entities; }
  std::vector<double> act(std::span<const std::vector<double>>) override {
    return std::vector<double>(entities_, rate_);
  }

 private:
  double rate_;
  std::size_t entities_ = 0;
};

/// Mean of the last `window` entries, clamped to [0,1]. Shorter histories
/// use what is there; an empty history gives 1.
double moving_average(std::span<const double> history, std::size_t window);

/// Reads one state feature per step (the previous period's usage), scales it
/// into action space and averages the last `window` readings.
class MovingAverageController final : public Controller {
 public:
  MovingAverageController(std::size_t window, std::size_t feature, double multiplier = 1.0);
  std::string name() const override { return "Moving Average"; }
  void reset(std::size_t entities) override;
  std::vector<double> act(std::span<const std::vector<double>> states) override;

 private:
  std::size_t window_, feature_;
  double multiplier_;
  std::vector<std::vector<double>> history_;
};

/// The GRU encoder followed by one tanh hidden layer and a sigmoid output.
struct BcModel {
  EncoderParams encoder;
  Tensor w1, b1;  // hidden x width, 1 x width
  Tensor w2, b2;  // width x 1, 1 x 1
  ImitationLoss imitation = ImitationLoss::CrossEntropy;

  static BcModel init(std::size_t state_width, std::size_t hidden, std::size_t width, std::uint64_t seed);
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

struct FitOptions {
  std::size_t epochs = 300;
  double learning_rate = 1e-2;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};

/// Shuffled index batches covering 0..n-1 once.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng);

/// Imitation loss of the BC model over every labeled step, built on `tape`
/// from leaves in parameters() order.
ad::Var bc_mlp_objective(ad::Tape& tape, std::span<const ad::Var> leaves, const BcModel& model,
                         std::span<const Trajectory> data);
double bc_mlp_loss(const BcModel& model, std::span<const Trajectory> data);

/// Fits the normalizer on `data`, then trains every parameter with Adam.
/// `loss_log`, when given, receives the mean batch loss per epoch.
BcModel train_plain_bc(std::span<const Trajectory> data, std::size_t hidden, std::size_t width,
                       ImitationLoss imitation, const FitOptions& options,
                       std::vector<double>* loss_log = nullptr);
/// Trains an already-initialized model in place.
void fit_plain_bc(BcModel& model, std::span<const Trajectory> data, const FitOptions& options,
                  std::vector<double>* loss_log = nullptr);

std::vector<double> act_all_prefixes(const Trajectory& traj, const BcModel& model);

class BcController final : public RecurrentController {
 public:
  explicit BcController(const BcModel& model) : model_(model) {}
  std::string name() const override { return "BC"; }

 protected:
  const EncoderParams& encoder() const override { return model_.encoder; }
  std::vector<double> head(const Tensor& hidden) const override;

 private:
  const BcModel& model_;
};

}  // namespace protohail
