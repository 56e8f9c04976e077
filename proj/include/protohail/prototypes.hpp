#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "protohail/autodiff.hpp"
#include "protohail/encoder.hpp"
#include "protohail/tensor.hpp"

namespace protohail {

/// K trainable embeddings with their current member sets and the index of
/// the expert trajectory each one is explained by.
struct PrototypeSet {
  Tensor embeddings;                              // K x m
  std::vector<std::size_t> nearest_expert;        // K entries
  std::vector<std::vector<std::size_t>> members;  // D_k, indices into the training set

  std::size_t count() const noexcept { return embeddings.rows(); }
  std::size_t width() const noexcept { return embeddings.cols(); }

  /// Seeds K prototypes at the embeddings of K distinct randomly chosen rows of
  /// `expert_embeddings`, so each starts on top of its own explanation.
  static PrototypeSet from_experts(const Tensor& expert_embeddings, std::size_t k,
                                   std::uint64_t seed);

  /// Rebuilds member sets from a per-trajectory assignment.
  void set_assignment(std::span<const std::size_t> assignment);
  /// Every index in [0, n) appears in exactly one member set.
  bool is_partition(std::size_t n) const;
};

/// argmin_k ||e_i - p_k||^2 per row of `embeddings`, ties to the lowest k.
std::vector<std::size_t> assign(const Tensor& embeddings, const Tensor& prototypes);

/// Index of the closest row of `experts` for every prototype.
std::vector<std::size_t> nearest_experts(const Tensor& prototypes, const Tensor& experts);

double loss_rep(const Tensor& prototypes, const Tensor& embeddings,
                std::span<const std::size_t> assignment);
/// 0 when K < 2.
double loss_div(const Tensor& prototypes);

struct InterpretabilityLoss {
  double value = 0.0;
  std::vector<std::size_t> nearest;
};
InterpretabilityLoss loss_int(const Tensor& prototypes, const Tensor& expert_embeddings);

// Taped versions. `gate` (optional) holds one multiplier per cluster for rep
// and int, or a K*K row-major symmetric matrix for div; an empty span means
// no gating.
ad::Var loss_rep(ad::Var prototypes, ad::Var embeddings, std::span<const std::size_t> assignment,
                 std::span<const double> gate = {});
ad::Var loss_div(ad::Tape& tape, ad::Var prototypes, std::span<const double> gate = {});
ad::Var loss_int(ad::Var prototypes, ad::Var expert_embeddings,
                 std::span<const std::size_t> nearest, std::span<const double> gate = {});

/// The expert trajectories that currently explain each prototype.
std::vector<const Trajectory*> project_explanations(const PrototypeSet& protos,
                                                    std::span<const Trajectory> experts);

}  // namespace protohail
