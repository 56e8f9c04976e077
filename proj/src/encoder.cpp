#include "protohail/encoder.hpp"

#include <cmath>
#include <map>
#include <random>

namespace protohail {

std::string to_string(Domain d) { return d == Domain::Cloud ? "cloud" : "airline"; }

Domain domain_from_string(const std::string& s) {
  if (s == "cloud") return Domain::Cloud;
  if (s == "airline") return Domain::Airline;
  throw ContractViolation("unknown domain '" + s + "' (expected cloud|airline)");
}

void Trajectory::validate() const {
  if (steps.empty()) throw ContractViolation("trajectory " + entity_id + " has no steps");
  const std::size_t d = steps.front().state.size();
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (steps[t].state.size() != d) {
      throw ContractViolation("trajectory " + entity_id + ": step " + std::to_string(t) +
                              " has width " + std::to_string(steps[t].state.size()) +
                              ", expected " + std::to_string(d));
    }
    if (steps[t].action && !(*steps[t].action >= 0.0 && *steps[t].action <= 1.0)) {
      throw ContractViolation("trajectory " + entity_id + ": action outside [0,1] at step " +
                              std::to_string(t));
    }
  }
}

Trajectory Trajectory::prefix(std::size_t k) const {
  if (k == 0 || k > steps.size()) throw ContractViolation("prefix length out of range");
  Trajectory out{entity_id, {steps.begin(), steps.begin() + static_cast<std::ptrdiff_t>(k)}, domain};
  return out;
}

Normalizer Normalizer::identity(std::size_t width) {
  return {std::vector<double>(width, 0.0), std::vector<double>(width, 1.0)};
}

Normalizer Normalizer::fit(std::span<const Trajectory> data) {
  if (data.empty()) throw ContractViolation("Normalizer::fit on empty data");
  const std::size_t d = data.front().width();
  std::vector<double> sum(d, 0.0), sq(d, 0.0);
  double n = 0.0;
  for (const Trajectory& tr : data) {
    for (const Step& s : tr.steps) {
      if (s.state.size() != d) throw ContractViolation("Normalizer::fit: ragged widths");
      for (std::size_t j = 0; j < d; ++j) {
        sum[j] += s.state[j];
        sq[j] += s.state[j] * s.state[j];
      }
      n += 1.0;
    }
  }
  Normalizer out;
  out.mean.resize(d);
  out.scale.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double mu = sum[j] / n;
    const double var = std::max(0.0, sq[j] / n - mu * mu);
    out.mean[j] = mu;
    // constant features pass through centered
    out.scale[j] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return out;
}

void Normalizer::apply(std::span<const double> raw, std::span<double> out) const {
  if (raw.size() != mean.size() || out.size() < raw.size()) {
    throw ContractViolation("state width " + std::to_string(raw.size()) +
                            " does not match encoder width " + std::to_string(mean.size()));
  }
  for (std::size_t j = 0; j < raw.size(); ++j) out[j] = (raw[j] - mean[j]) / scale[j];
}

EncoderParams EncoderParams::init(std::size_t state_width, std::size_t hidden, std::uint64_t seed) {
  if (state_width == 0 || hidden == 0) throw ContractViolation("encoder widths must be positive");
  EncoderParams p;
  p.state_width = state_width;
  p.hidden = hidden;
  p.normalizer = Normalizer::identity(state_width);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> u(-bound, bound);
  auto draw = [&](std::size_t r, std::size_t c) {
    Tensor t(r, c);
    for (double& v : t.flat()) v = u(rng);
    return t;
  };
  p.w_input = draw(state_width + 1, 3 * hidden);
  p.b_input = draw(1, 3 * hidden);
  p.w_hidden_zr = draw(hidden, 2 * hidden);
  p.w_hidden_n = draw(hidden, hidden);
  return p;
}

std::size_t EncoderParams::parameter_count() const noexcept {
  return w_input.size() + b_input.size() + w_hidden_zr.size() + w_hidden_n.size();
}

std::array<Tensor*, 4> EncoderParams::tensors() {
  return {&w_input, &b_input, &w_hidden_zr, &w_hidden_n};
}

std::array<const Tensor*, 4> EncoderParams::tensors() const {
  return {&w_input, &b_input, &w_hidden_zr, &w_hidden_n};
}

EncoderVars bind_encoder(ad::Tape& tape, const EncoderParams& params, bool trainable) {
  auto bind = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  return {bind(params.w_input), bind(params.b_input), bind(params.w_hidden_zr),
          bind(params.w_hidden_n), params.hidden};
}

Tensor encoder_inputs(const EncoderParams& params, std::span<const std::vector<double>> states,
                      std::span<const double> prev_actions) {
  if (states.size() != prev_actions.size()) {
    throw ContractViolation("encoder_inputs: state/action row count mismatch");
  }
  const std::size_t w = params.input_width();
  Tensor x(states.size(), w);
  for (std::size_t i = 0; i < states.size(); ++i) {
    auto row = x.row_span(i);
    params.normalizer.apply(states[i], row.first(params.state_width));
    row[params.state_width] = prev_actions[i];
  }
  return x;
}

ad::Var gru_step(const EncoderVars& enc, ad::Var h, ad::Var projected_input) {
  const std::size_t m = enc.hidden;
  ad::Var zr = ad::sigmoid(ad::add(ad::slice_cols(projected_input, 0, 2 * m),
                                   ad::matmul(h, enc.w_hidden_zr)));
  ad::Var z = ad::slice_cols(zr, 0, m);
  ad::Var r = ad::slice_cols(zr, m, 2 * m);
  ad::Var n = ad::tanh(ad::add(ad::slice_cols(projected_input, 2 * m, 3 * m),
                               ad::matmul(ad::mul(r, h), enc.w_hidden_n)));
  // (1 - z) * n + z * h == n + z * (h - n)
  return ad::add(n, ad::mul(z, ad::sub(h, n)));
}

EncodedBatch encode_batch(ad::Tape& tape, const EncoderVars& enc, const EncoderParams& params,
                          std::span<const Trajectory* const> trajs) {
  if (trajs.empty()) throw ContractViolation("encode_batch: no trajectories");
  for (const Trajectory* tr : trajs) {
    tr->validate();
    if (tr->width() != params.state_width) {
      throw ContractViolation("trajectory " + tr->entity_id + " width " +
                              std::to_string(tr->width()) + " != encoder width " +
                              std::to_string(params.state_width));
    }
  }
  const std::size_t m = params.hidden;
  const std::size_t w = params.input_width();

  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < trajs.size(); ++i) by_length[trajs[i]->length()].push_back(i);

  EncodedBatch out;
  out.offsets.resize(trajs.size() + 1, 0);
  for (std::size_t i = 0; i < trajs.size(); ++i)
    out.offsets[i + 1] = out.offsets[i] + trajs[i]->length();

  // Blocks are time-major per length group; `where` maps each block row back
  // to its trajectory-major position.
  std::vector<ad::Var> blocks;
  std::vector<std::size_t> source_row_of(out.offsets.back());
  std::size_t block_row = 0;
  for (const auto& [len, members] : by_length) {
    const std::size_t b = members.size();
    Tensor x(len * b, w);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < b; ++j) {
        const Trajectory& tr = *trajs[members[j]];
        auto row = x.row_span(t * b + j);
        params.normalizer.apply(tr.steps[t].state, row.first(params.state_width));
        row[params.state_width] = t == 0 ? 0.0 : tr.steps[t - 1].action.value_or(0.0);
      }
    }
    ad::Var projected = ad::add(ad::matmul(tape.constant(std::move(x)), enc.w_input), enc.b_input);
    ad::Var h = tape.constant(Tensor(b, m));
    for (std::size_t t = 0; t < len; ++t) {
      h = gru_step(enc, h, ad::slice_rows(projected, t * b, (t + 1) * b));
      blocks.push_back(h);
      for (std::size_t j = 0; j < b; ++j) {
        source_row_of[out.offsets[members[j]] + t] = block_row + j;
      }
      block_row += b;
    }
  }
  ad::Var stacked = blocks.size() == 1 ? blocks.front() : ad::concat_rows(blocks);
  std::vector<std::size_t> finals_index(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i)
    finals_index[i] = source_row_of[out.offsets[i + 1] - 1];
  out.finals = ad::gather_rows(stacked, std::move(finals_index));
  out.prefixes = ad::gather_rows(stacked, std::move(source_row_of));
  return out;
}

Tensor encoder_step(const EncoderParams& params, const Tensor& h, const Tensor& inputs) {
  if (h.rows() != inputs.rows() || h.cols() != params.hidden || inputs.cols() != params.input_width()) {
    throw ContractViolation("encoder_step: h " + shape_string(h) + ", inputs " + shape_string(inputs));
  }
  ad::Tape tape;
  const EncoderVars enc = bind_encoder(tape, params, false);
  ad::Var projected = ad::add(ad::matmul(tape.constant(inputs), enc.w_input), enc.b_input);
  return gru_step(enc, tape.constant(h), projected).value();
}

Tensor encode(const Trajectory& traj, const EncoderParams& params) {
  ad::Tape tape;
  const EncoderVars enc = bind_encoder(tape, params, false);
  const Trajectory* one[] = {&traj};
  return encode_batch(tape, enc, params, one).finals.value();
}

Tensor encode_all_prefixes(const Trajectory& traj, const EncoderParams& params) {
  ad::Tape tape;
  const EncoderVars enc = bind_encoder(tape, params, false);
  const Trajectory* one[] = {&traj};
  return encode_batch(tape, enc, params, one).prefixes.value();
}

Tensor encode_finals(std::span<const Trajectory* const> trajs, const EncoderParams& params) {
  ad::Tape tape;
  const EncoderVars enc = bind_encoder(tape, params, false);
  return encode_batch(tape, enc, params, trajs).finals.value();
}

}  // namespace protohail
