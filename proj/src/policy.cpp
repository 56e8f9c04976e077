#include "protohail/policy.hpp"

#include <algorithm>
#include <cmath>

namespace protohail {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<const Trajectory*> pointers(std::span<const Trajectory> data) {
  std::vector<const Trajectory*> out;
  out.reserve(data.size());
  for (const Trajectory& t : data) out.push_back(&t);
  return out;
}

}  // namespace

PolicyHead PolicyHead::zeros(std::size_t k) { return {Tensor(k, 1), Tensor(1, 1)}; }

void LossWeights::validate() const {
  for (double w : {w1, w2, w3, w4}) {
    if (!(w >= 0.0 && w <= 1.0)) throw ContractViolation("loss weights must lie in [0,1]");
  }
}

void PolicyModel::validate() const {
  if (protos.count() == 0) throw ContractViolation("model has no prototypes");
  if (protos.width() != encoder.hidden) {
    throw ContractViolation("prototype width " + std::to_string(protos.width()) +
                            " != encoder width " + std::to_string(encoder.hidden));
  }
  if (head.weights.rows() != protos.count() || head.weights.cols() != 1 ||
      head.bias.size() != 1) {
    throw ContractViolation("head shape " + shape_string(head.weights) + " does not match K=" +
                            std::to_string(protos.count()));
  }
}

std::vector<Tensor*> PolicyModel::parameters() {
  auto e = encoder.tensors();
  return {e[0], e[1], e[2], e[3], &protos.embeddings, &head.weights, &head.bias};
}

std::vector<const Tensor*> PolicyModel::parameters() const {
  auto e = encoder.tensors();
  return {e[0], e[1], e[2], e[3], &protos.embeddings, &head.weights, &head.bias};
}

Tensor similarity(std::span<const double> h, const Tensor& prototypes) {
  if (h.size() != prototypes.cols()) throw ContractViolation("similarity: width mismatch");
  Tensor s(1, prototypes.rows());
  for (std::size_t k = 0; k < prototypes.rows(); ++k)
    s[k] = -squared_distance(h, prototypes.row_span(k));
  return s;
}

double logit(std::span<const double> h, const PolicyModel& model) {
  const Tensor s = similarity(h, model.protos.embeddings);
  double z = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) z += model.head.weights[k] * s[k];
  return z + model.head.bias[0];
}

double act_from_embedding(std::span<const double> h, const PolicyModel& model) {
  return stable_sigmoid(logit(h, model));
}

double act(const Trajectory& prefix, const PolicyModel& model) {
  model.validate();
  const Tensor h = encode(prefix, model.encoder);
  return act_from_embedding(h.flat(), model);
}

std::vector<double> act_all_prefixes(const Trajectory& traj, const PolicyModel& model) {
  model.validate();
  const Tensor hs = encode_all_prefixes(traj, model.encoder);
  std::vector<double> out(hs.rows());
  for (std::size_t t = 0; t < hs.rows(); ++t) out[t] = act_from_embedding(hs.row_span(t), model);
  return out;
}

ActionBucket action_bucket(std::span<const double> similarity_row, double a) {
  if (similarity_row.empty()) throw ContractViolation("action_bucket: no prototypes");
  const auto it = std::max_element(similarity_row.begin(), similarity_row.end());
  const auto decile = static_cast<std::size_t>(std::clamp(a, 0.0, 1.0) * 10.0);
  return {static_cast<std::size_t>(it - similarity_row.begin()), std::min<std::size_t>(decile, 9)};
}

ModelVars bind_model(ad::Tape& tape, const PolicyModel& model, bool trainable) {
  auto bind = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  return {bind_encoder(tape, model.encoder, trainable), bind(model.protos.embeddings),
          bind(model.head.weights), bind(model.head.bias)};
}

ModelVars model_vars_from(std::span<const ad::Var> leaves, std::size_t hidden) {
  if (leaves.size() != 7) throw ContractViolation("model_vars_from: expected 7 parameters");
  return {{leaves[0], leaves[1], leaves[2], leaves[3], hidden}, leaves[4], leaves[5], leaves[6]};
}

ad::Var similarity(ad::Var embeddings, ad::Var prototypes) {
  if (embeddings.cols() != prototypes.cols()) throw ContractViolation("similarity: width mismatch");
  const std::size_t k = prototypes.rows();
  std::vector<ad::Var> cols;
  cols.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    ad::Var diff = ad::sub(embeddings, ad::slice_rows(prototypes, c, c + 1));
    cols.push_back(ad::scale(ad::row_sum(ad::square(diff)), -1.0));
  }
  return k == 1 ? cols.front() : ad::concat_cols(cols);
}

ad::Var head_actions(ad::Var similarities, ad::Var weights, ad::Var bias) {
  return ad::sigmoid(ad::add(ad::matmul(similarities, weights), bias));
}

ad::Var imitation_loss(ad::Var actions, std::span<const double> labels, ImitationLoss kind,
                       std::span<const double> row_gate) {
  const std::size_t n = actions.rows();
  if (actions.cols() != 1 || labels.size() != n) throw ContractViolation("imitation_loss: shape");
  if (n == 0) throw ContractViolation("imitation_loss: no labeled steps");
  if (!row_gate.empty() && row_gate.size() != n) throw ContractViolation("imitation_loss: gate size");
  ad::Tape& tape = *actions.tape;
  Tensor w(n, 1), y(n, 1), not_y(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(labels[i] >= 0.0 && labels[i] <= 1.0)) {
      throw ContractViolation("expert action " + std::to_string(labels[i]) + " outside [0,1]");
    }
    y[i] = labels[i];
    not_y[i] = 1.0 - labels[i];
    w[i] = 1.0 / static_cast<double>(n);
    if (!row_gate.empty()) w[i] *= row_gate[i];
  }
  ad::Var per_row;
  if (kind == ImitationLoss::CrossEntropy) {
    ad::Var ll = ad::add(ad::mul(ad::log_clamped(actions), tape.constant(std::move(y))),
                         ad::mul(ad::log_clamped(ad::one_minus(actions)),
                                 tape.constant(std::move(not_y))));
    for (double& v : w.flat()) v = -v;
    per_row = ll;
  } else {
    per_row = ad::square(ad::sub(actions, tape.constant(std::move(y))));
  }
  return ad::sum(ad::mul(per_row, tape.constant(std::move(w))));
}

ObjectiveGraph build_objective(ad::Tape& tape, const ModelVars& vars, const PolicyModel& model,
                               std::span<const Trajectory> data, const LossWeights& weights,
                               const LossGates* gates) {
  weights.validate();
  model.validate();
  if (data.empty()) throw ContractViolation("objective over an empty dataset");
  const auto ptrs = pointers(data);
  const EncodedBatch enc = encode_batch(tape, vars.encoder, model.encoder, ptrs);

  ObjectiveGraph g;
  g.finals = enc.finals.value();
  const Tensor& pvals = vars.prototypes.value();
  g.assignment = assign(g.finals, pvals);
  g.nearest = nearest_experts(pvals, g.finals);

  std::vector<std::size_t> labeled;
  std::vector<double> labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t t = 0; t < data[i].length(); ++t) {
      if (data[i].steps[t].action) {
        labeled.push_back(enc.offsets[i] + t);
        labels.push_back(*data[i].steps[t].action);
      }
    }
  }
  ad::Var h = labeled.size() == enc.prefixes.rows() ? enc.prefixes
                                                    : ad::gather_rows(enc.prefixes, labeled);
  ad::Var sims = similarity(h, vars.prototypes);
  ad::Var actions = head_actions(sims, vars.head_weights, vars.head_bias);
  g.actions = actions.value();
  g.buckets.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    g.buckets[i] = action_bucket(sims.value().row_span(i), g.actions[i]);

  const std::size_t k = model.protos.count();
  std::span<const double> cluster_gate, pair_gate;
  std::vector<double> step_gate;
  if (gates) {
    if (!gates->cluster.empty()) {
      if (gates->cluster.size() != k) throw ContractViolation("cluster gate size != K");
      cluster_gate = gates->cluster;
    }
    if (!gates->pair.empty()) {
      if (gates->pair.size() != k * k) throw ContractViolation("pair gate size != K*K");
      pair_gate = gates->pair;
    }
    if (gates->action) {
      step_gate.resize(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) step_gate[i] = gates->action(g.buckets[i]);
    }
  }

  // A prototype with no members in this pass drops out of the diversity
  // term. Otherwise only loss_int holds it, and with w3 <= 2*w2 the pair
  // terms push it away without bound.
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t a : g.assignment) ++counts[a];
  std::vector<double> masked_pairs;
  if (k >= 2 && std::find(counts.begin(), counts.end(), 0) != counts.end()) {
    masked_pairs.assign(k * k, 1.0);
    if (!pair_gate.empty()) masked_pairs.assign(pair_gate.begin(), pair_gate.end());
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (counts[i] == 0 || counts[j] == 0) masked_pairs[i * k + j] = 0.0;
    pair_gate = masked_pairs;
  }

  g.rep = loss_rep(vars.prototypes, enc.finals, g.assignment, cluster_gate);
  g.div = loss_div(tape, vars.prototypes, pair_gate);
  g.intr = loss_int(vars.prototypes, enc.finals, g.nearest, cluster_gate);
  g.im = imitation_loss(actions, labels, model.imitation, step_gate);

  ad::Var terms[] = {ad::scale(g.rep, weights.w1), ad::scale(g.div, weights.w2),
                     ad::scale(g.intr, weights.w3), ad::scale(g.im, weights.w4)};
  g.total = ad::add(ad::add(terms[0], terms[1]), ad::add(terms[2], terms[3]));
  g.values = {g.rep.item(), g.div.item(), g.intr.item(), g.im.item(), g.total.item()};
  return g;
}

ObjectiveResult evaluate_objective(const PolicyModel& model, std::span<const Trajectory> data,
                                   const LossWeights& weights, const LossGates* gates,
                                   bool with_grads) {
  ad::Tape tape;
  const ModelVars vars = bind_model(tape, model, with_grads);
  ObjectiveGraph g = build_objective(tape, vars, model, data, weights, gates);
  ObjectiveResult out{g.values, {}, std::move(g.assignment), std::move(g.nearest),
                      std::move(g.finals), std::move(g.actions), std::move(g.buckets)};
  if (with_grads) {
    tape.backward(g.total);
    const ad::Var leaves[] = {vars.encoder.w_input, vars.encoder.b_input, vars.encoder.w_hidden_zr,
                              vars.encoder.w_hidden_n, vars.prototypes, vars.head_weights,
                              vars.head_bias};
    for (const ad::Var& v : leaves) {
      const Tensor& gr = v.grad();
      out.grads.push_back(gr.empty() ? Tensor(v.rows(), v.cols()) : gr);
    }
  }
  return out;
}

double bc_loss(const PolicyModel& model, std::span<const Trajectory> experts) {
  ad::Tape tape;
  const ModelVars vars = bind_model(tape, model, false);
  for (const Trajectory& tr : experts) {
    for (const Step& s : tr.steps) {
      if (!s.action) throw ContractViolation("bc_loss: unlabeled expert step in " + tr.entity_id);
    }
  }
  const auto ptrs = pointers(experts);
  const EncodedBatch enc = encode_batch(tape, vars.encoder, model.encoder, ptrs);
  std::vector<double> labels;
  for (const Trajectory& tr : experts)
    for (const Step& s : tr.steps) labels.push_back(*s.action);
  ad::Var actions = head_actions(similarity(enc.prefixes, vars.prototypes), vars.head_weights,
                                 vars.head_bias);
  return imitation_loss(actions, labels, model.imitation).item();
}

LossBreakdown full_loss(const PolicyModel& model, std::span<const Trajectory> data,
                        const LossWeights& weights) {
  return evaluate_objective(model, data, weights, nullptr, false).losses;
}

double QuadraticView::logit(std::span<const double> h) const {
  if (h.size() != linear.size()) throw ContractViolation("QuadraticView: width mismatch");
  double hh = 0.0, lin = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    hh += h[i] * h[i];
    lin += linear[i] * h[i];
  }
  return quadratic * hh + lin + constant;
}

QuadraticView quadratic_view(const PolicyModel& model) {
  model.validate();
  const Tensor& p = model.protos.embeddings;
  const Tensor& b = model.head.weights;
  QuadraticView q;
  q.linear = Tensor(1, p.cols());
  double sum_b = 0.0;
  q.constant = model.head.bias[0];
  for (std::size_t k = 0; k < p.rows(); ++k) {
    sum_b += b[k];
    double pp = 0.0;
    for (std::size_t i = 0; i < p.cols(); ++i) {
      q.linear[i] += 2.0 * b[k] * p(k, i);
      pp += p(k, i) * p(k, i);
    }
    q.constant -= b[k] * pp;
  }
  q.quadratic = -sum_b;
  q.curvature_sign = sum_b > 0.0 ? 1 : (sum_b < 0.0 ? -1 : 0);
  if (q.curvature_sign == 0) {
    q.shape_note = "affine in h: monotone along every direction";
  } else {
    q.shape_note = std::string(q.curvature_sign > 0 ? "concave" : "convex") +
                   " quadratic in h: at most two monotone pieces along any line, split at the "
                   "vertex -linear/(2*quadratic)";
  }
  return q;
}

}  // namespace protohail
