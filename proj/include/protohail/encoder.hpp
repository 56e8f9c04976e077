#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protohail/autodiff.hpp"
#include "protohail/tensor.hpp"

namespace protohail {

enum class Domain { Cloud, Airline };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct Step {
  std::vector<double> state;
  /// Expert action in [0,1]; absent for a trailing unlabeled state.
  std::optional<double> action;
};

/// Timestamped states and expert actions of one service or airline.
struct Trajectory {
  std::string entity_id;
  std::vector<Step> steps;
  Domain domain = Domain::Cloud;

  std::size_t length() const noexcept { return steps.size(); }
  std::size_t width() const noexcept { return steps.empty() ? 0 : steps.front().state.size(); }
  /// Throws ContractViolation on an empty trajectory, ragged widths or an
  /// action outside [0,1].
  void validate() const;
  Trajectory prefix(std::size_t k) const;
};

/// Per-feature z-score constants, fitted on the training split.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Normalizer identity(std::size_t width);
  static Normalizer fit(std::span<const Trajectory> data);
  std::size_t width() const noexcept { return mean.size(); }
  void apply(std::span<const double> raw, std::span<double> out) const;
};

/// Single-layer GRU. The input at step t is normalize(s_t) followed by the
/// previous step's action (0 at t = 0), so a prefix embedding never sees the
/// action it is asked to predict.
struct EncoderParams {
  std::size_t state_width = 0;
  std::size_t hidden = 0;
  Normalizer normalizer;
  Tensor w_input;      // (state_width + 1) x 3*hidden, gate order [update | reset | candidate]
  Tensor b_input;      // 1 x 3*hidden
  Tensor w_hidden_zr;  // hidden x 2*hidden
  Tensor w_hidden_n;   // hidden x hidden

  static EncoderParams init(std::size_t state_width, std::size_t hidden, std::uint64_t seed);
  std::size_t input_width() const noexcept { return state_width + 1; }
  std::size_t parameter_count() const noexcept;
  std::array<Tensor*, 4> tensors();
  std::array<const Tensor*, 4> tensors() const;
};

struct EncoderVars {
  ad::Var w_input, b_input, w_hidden_zr, w_hidden_n;
  std::size_t hidden = 0;
};

/// Binds the encoder weights as leaves (trainable) or constants.
EncoderVars bind_encoder(ad::Tape& tape, const EncoderParams& params, bool trainable);

/// Input rows for one recurrent step: normalized states with the previous
/// actions appended.
Tensor encoder_inputs(const EncoderParams& params, std::span<const std::vector<double>> states,
                      std::span<const double> prev_actions);

/// One recurrent update h' = (1 - z) * n + z * h for a batch of rows.
ad::Var gru_step(const EncoderVars& enc, ad::Var h, ad::Var projected_input);

struct EncodedBatch {
  /// Every prefix embedding, trajectory-major: rows offsets[i] .. offsets[i+1]-1
  /// belong to trajectory i, row offsets[i] + k embeds prefix tau_{k+1}.
  ad::Var prefixes;
  /// Full-trajectory embeddings, one row per trajectory.
  ad::Var finals;
  std::vector<std::size_t> offsets;
};

/// Encodes all prefixes of every trajectory in one left-to-right pass per
/// distinct length.
EncodedBatch encode_batch(ad::Tape& tape, const EncoderVars& enc, const EncoderParams& params,
                          std::span<const Trajectory* const> trajs);

/// Advances every row of `h` by one step on raw inputs (rows from
/// encoder_inputs). Used by closed-loop rollouts, where the previous action
/// is the controller's own output.
Tensor encoder_step(const EncoderParams& params, const Tensor& h, const Tensor& inputs);

/// Final hidden state after consuming every step of `traj` (1 x hidden).
Tensor encode(const Trajectory& traj, const EncoderParams& params);

/// Embeddings of tau_1 .. tau_T as rows of a T x hidden tensor.
Tensor encode_all_prefixes(const Trajectory& traj, const EncoderParams& params);

/// Full-trajectory embeddings for a set of trajectories (n x hidden).
Tensor encode_finals(std::span<const Trajectory* const> trajs, const EncoderParams& params);

}  // namespace protohail
