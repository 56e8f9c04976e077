#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "protohail/autodiff.hpp"
#include "protohail/encoder.hpp"
#include "protohail/prototypes.hpp"
#include "protohail/tensor.hpp"

namespace protohail {

enum class ImitationLoss { CrossEntropy, SquaredError };

/// Linear layer over prototype similarities: logit = sum_k b_k sim_k + bias.
struct PolicyHead {
  Tensor weights;  // K x 1
  Tensor bias;     // 1 x 1

  static PolicyHead zeros(std::size_t k);
  std::size_t count() const noexcept { return weights.rows(); }
};

struct LossWeights {
  double w1 = 0.8;  // representation
  double w2 = 0.1;  // diversity
  double w3 = 0.1;  // interpretability
  double w4 = 1.0;  // imitation

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct PolicyModel {
  EncoderParams encoder;
  PrototypeSet protos;
  PolicyHead head;
  ImitationLoss imitation = ImitationLoss::CrossEntropy;

  /// Encoder width, prototype width and head width must agree.
  void validate() const;
  /// Stable ordering used by the optimizer and checkpoints:
  /// encoder (4 tensors), prototypes, head weights, head bias.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

inline constexpr std::size_t kPrototypeSlot = 4;
inline constexpr std::size_t kHeadWeightSlot = 5;
inline constexpr std::size_t kHeadBiasSlot = 6;

/// -||h - p_k||^2 for each prototype, as a 1 x K row.
Tensor similarity(std::span<const double> h, const Tensor& prototypes);
double logit(std::span<const double> h, const PolicyModel& model);
double act_from_embedding(std::span<const double> h, const PolicyModel& model);

/// Oversubscription rate for the last state of `prefix`.
double act(const Trajectory& prefix, const PolicyModel& model);
/// act() for every prefix of `traj`, in one encoder pass.
std::vector<double> act_all_prefixes(const Trajectory& traj, const PolicyModel& model);

/// Cumulative action feedback is keyed by the most similar prototype and the
/// decile of the predicted rate.
struct ActionBucket {
  std::size_t prototype = 0;
  std::size_t decile = 0;
  friend auto operator<=>(const ActionBucket&, const ActionBucket&) = default;
};
ActionBucket action_bucket(std::span<const double> similarity_row, double a);

/// Optional multiplicative gates on individual loss terms.
struct LossGates {
  std::vector<double> cluster;  // K, scales the rep and int terms of each prototype
  std::vector<double> pair;     // K*K symmetric, scales each diversity pair term
  std::function<double(const ActionBucket&)> action;  // scales each imitation step
};

struct LossBreakdown {
  double rep = 0.0, div = 0.0, intr = 0.0, im = 0.0, total = 0.0;
};

struct ModelVars {
  EncoderVars encoder;
  ad::Var prototypes, head_weights, head_bias;
};
ModelVars bind_model(ad::Tape& tape, const PolicyModel& model, bool trainable);
/// Binds already-created leaves in parameters() order.
ModelVars model_vars_from(std::span<const ad::Var> leaves, std::size_t hidden);

/// n x K matrix of -||h_i - p_k||^2 computed from direct differences, so that
/// h == p_k gives exactly 0.
ad::Var similarity(ad::Var embeddings, ad::Var prototypes);
ad::Var head_actions(ad::Var similarities, ad::Var weights, ad::Var bias);

/// Mean soft-label cross-entropy (or squared error) over rows, optionally
/// scaled per row by `row_gate`.
ad::Var imitation_loss(ad::Var actions, std::span<const double> labels, ImitationLoss kind,
                       std::span<const double> row_gate = {});

struct ObjectiveGraph {
  ad::Var rep, div, intr, im, total;
  LossBreakdown values;
  std::vector<std::size_t> assignment;  // per trajectory, from this pass's embeddings
  std::vector<std::size_t> nearest;     // per prototype, index into `data`
  Tensor finals;                        // full-trajectory embeddings
  Tensor actions;                       // predicted a per labeled step, in data order
  std::vector<ActionBucket> buckets;    // per labeled step
};

/// Builds w1 L_rep + w2 L_div + w3 L_int + w4 L_IM on `tape`. Cluster
/// membership and nearest experts are taken from this pass's embeddings and
/// treated as constants. With `gates == nullptr` no gate multiply happens.
ObjectiveGraph build_objective(ad::Tape& tape, const ModelVars& vars, const PolicyModel& model,
                               std::span<const Trajectory> data, const LossWeights& weights,
                               const LossGates* gates);

struct ObjectiveResult {
  LossBreakdown losses;
  std::vector<Tensor> grads;  // parameters() order; empty unless requested
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> nearest;
  Tensor finals;
  Tensor actions;
  std::vector<ActionBucket> buckets;
};
ObjectiveResult evaluate_objective(const PolicyModel& model, std::span<const Trajectory> data,
                                   const LossWeights& weights, const LossGates* gates,
                                   bool with_grads);

double bc_loss(const PolicyModel& model, std::span<const Trajectory> experts);
LossBreakdown full_loss(const PolicyModel& model, std::span<const Trajectory> data,
                        const LossWeights& weights);

/// logit(h) = quadratic * h'h + linear . h + constant.
struct QuadraticView {
  double quadratic = 0.0;
  Tensor linear;  // 1 x m
  double constant = 0.0;
  /// sign of sum_k b_k: the logit is concave (>0), convex (<0) or affine (0)
  /// in h, so along any line it splits into at most two monotone pieces.
  int curvature_sign = 0;
  std::string shape_note;

  double logit(std::span<const double> h) const;
};
QuadraticView quadratic_view(const PolicyModel& model);

}  // namespace protohail
