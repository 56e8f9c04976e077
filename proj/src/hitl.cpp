#include "protohail/hitl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protohail/kvconfig.hpp"
#include "protohail/numerics.hpp"

namespace protohail {

std::string to_string(FeedbackKind k) {
  switch (k) {
    case FeedbackKind::Up: return "up";
    case FeedbackKind::Down: return "down";
    case FeedbackKind::Merge: return "merge";
    case FeedbackKind::Split: return "split";
  }
  return "?";
}

FeedbackKind feedback_kind_from_string(const std::string& s) {
  if (s == "up") return FeedbackKind::Up;
  if (s == "down") return FeedbackKind::Down;
  if (s == "merge") return FeedbackKind::Merge;
  if (s == "split") return FeedbackKind::Split;
  throw ContractViolation("unknown feedback kind '" + s + "'");
}

namespace {

std::pair<std::size_t, std::size_t> ordered(std::size_t i, std::size_t j) {
  return i < j ? std::pair{i, j} : std::pair{j, i};
}

bool saturated(int votes, double level) { return std::abs(std::tanh(votes)) >= level; }

}  // namespace

void FeedbackLedger::check_sequence(std::uint64_t seq) const {
  if (last_seq_ && seq <= *last_seq_) {
    throw ReplayError("sequence number " + std::to_string(seq) + " already consumed (last " +
                      std::to_string(*last_seq_) + ")");
  }
}

void FeedbackLedger::record(const FeedbackEvent& e) {
  check_sequence(e.seq);
  const bool vote = e.kind == FeedbackKind::Up || e.kind == FeedbackKind::Down;
  if (vote) {
    const int delta = e.kind == FeedbackKind::Up ? 1 : -1;
    if (e.action) {
      if (!e.bucket) throw ContractViolation("action feedback has not been resolved to a bucket");
      action_[*e.bucket] += delta;
    } else if (e.prototypes.size() == 1) {
      proto_[e.prototypes[0]] += delta;
    } else if (e.prototypes.size() == 2 && e.prototypes[0] != e.prototypes[1]) {
      pair_[ordered(e.prototypes[0], e.prototypes[1])] += delta;
    } else {
      throw ContractViolation("vote must target one prototype, a pair, or an action");
    }
  } else if (e.kind == FeedbackKind::Merge) {
    if (e.prototypes.size() != 2 || e.prototypes[0] == e.prototypes[1]) {
      throw ContractViolation("merge needs two distinct prototypes");
    }
  } else if (e.prototypes.size() != 1) {
    throw ContractViolation("split targets a single prototype");
  }
  last_seq_ = e.seq;
}

int FeedbackLedger::prototype_total(std::size_t k) const {
  const auto it = proto_.find(k);
  return it == proto_.end() ? 0 : it->second;
}

int FeedbackLedger::pair_total(std::size_t i, std::size_t j) const {
  const auto it = pair_.find(ordered(i, j));
  return it == pair_.end() ? 0 : it->second;
}

int FeedbackLedger::action_total(const ActionBucket& b) const {
  const auto it = action_.find(b);
  return it == action_.end() ? 0 : it->second;
}

bool FeedbackLedger::empty() const noexcept {
  return proto_.empty() && pair_.empty() && action_.empty();
}

void FeedbackLedger::remap_after_merge(std::size_t i, std::size_t j) {
  const auto [lo, hi] = ordered(i, j);
  auto shift = [hi = hi](std::size_t x) { return x > hi ? x - 1 : x; };
  auto touched = [lo = lo, hi = hi](std::size_t x) { return x == lo || x == hi; };

  std::map<std::size_t, int> proto;
  for (auto [k, v] : proto_)
    if (!touched(k)) proto[shift(k)] = v;
  std::map<std::pair<std::size_t, std::size_t>, int> pair;
  for (auto [p, v] : pair_)
    if (!touched(p.first) && !touched(p.second)) pair[ordered(shift(p.first), shift(p.second))] = v;
  std::map<ActionBucket, int> action;
  for (auto [b, v] : action_)
    if (!touched(b.prototype)) action[{shift(b.prototype), b.decile}] = v;
  proto_ = std::move(proto);
  pair_ = std::move(pair);
  action_ = std::move(action);
}

void FeedbackLedger::remap_after_split(std::size_t k_before) {
  // The new prototype takes index k_before; clear anything stale under that id.
  proto_.erase(k_before);
  std::erase_if(pair_, [&](const auto& kv) {
    return kv.first.first == k_before || kv.first.second == k_before;
  });
  std::erase_if(action_, [&](const auto& kv) { return kv.first.prototype == k_before; });
}

LossGates FeedbackLedger::gates(std::size_t k) const {
  LossGates g;
  g.cluster.assign(k, 1.0);
  g.pair.assign(k * k, 1.0);
  for (auto [id, v] : proto_)
    if (id < k) g.cluster[id] = advice_gate(v);
  for (auto [p, v] : pair_) {
    if (p.second < k) {
      g.pair[p.first * k + p.second] = advice_gate(v);
      g.pair[p.second * k + p.first] = advice_gate(v);
    }
  }
  if (!action_.empty()) {
    auto votes = action_;
    g.action = [votes](const ActionBucket& b) {
      const auto it = votes.find(b);
      return it == votes.end() ? 1.0 : advice_gate(it->second);
    };
  }
  return g;
}

void FeedbackLedger::restore(std::map<std::size_t, int> proto,
                             std::map<std::pair<std::size_t, std::size_t>, int> pair,
                             std::map<ActionBucket, int> action, std::optional<std::uint64_t> last_seq) {
  proto_ = std::move(proto);
  pair_ = std::move(pair);
  action_ = std::move(action);
  last_seq_ = last_seq;
}

double advice_gate(double cumulative) { return std::exp(-std::tanh(cumulative)); }

double prototype_uncertainty(const PrototypeSet& protos, const Tensor& embeddings, std::size_t k) {
  if (k >= protos.count()) throw ContractViolation("prototype_uncertainty: no prototype " + std::to_string(k));
  const auto& members = protos.members[k];
  if (members.size() <= 1) return 0.0;
  std::vector<double> d(members.size());
  for (std::size_t i = 0; i < members.size(); ++i)
    d[i] = squared_distance(protos.embeddings.row_span(k), embeddings.row_span(members[i]));
  const double dmin = *std::min_element(d.begin(), d.end());
  std::vector<double> p(d.size());
  double z = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) z += (p[i] = std::exp(-(d[i] - dmin)));
  for (double& v : p) v /= z;
  const double h = shannon_entropy(p) / std::log(static_cast<double>(members.size()));
  return std::clamp(h, 0.0, 1.0);
}

double mean_member_distance(const PrototypeSet& protos, const Tensor& embeddings, std::size_t k) {
  const auto& members = protos.members.at(k);
  if (members.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t m : members)
    s += squared_distance(protos.embeddings.row_span(k), embeddings.row_span(m));
  return s / static_cast<double>(members.size());
}

double action_uncertainty(double a) {
  if (a <= 0.0 || a >= 1.0) return 0.0;
  return -(a * std::log(a) + (1.0 - a) * std::log(1.0 - a)) / std::log(2.0);
}

QuerySet build_query(std::uint64_t iteration, const PrototypeSet& protos, const Tensor& embeddings,
                     std::span<const Trajectory> data, std::span<const StepPrediction> steps,
                     const FeedbackLedger& ledger, const QueryConfig& config) {
  QuerySet q;
  q.iteration = iteration;
  const std::size_t k = protos.count();

  std::vector<std::size_t> owner(data.size(), 0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t m : protos.members[c]) owner.at(m) = c;
  std::vector<double> risky(k, 0.0), total(k, 0.0);
  for (const StepPrediction& s : steps) {
    total[owner.at(s.traj)] += 1.0;
    if (is_risky(config.risk_side, s.a, s.a_expert)) risky[owner[s.traj]] += 1.0;
  }

  std::vector<PrototypeQuery> stats(k);
  for (std::size_t c = 0; c < k; ++c) {
    stats[c] = {c, prototype_uncertainty(protos, embeddings, c),
                mean_member_distance(protos, embeddings, c), protos.members[c].size(),
                total[c] > 0.0 ? risky[c] / total[c] : 0.0};
  }
  std::vector<std::size_t> by_distance(k);
  std::iota(by_distance.begin(), by_distance.end(), 0);
  std::stable_sort(by_distance.begin(), by_distance.end(), [&](std::size_t a, std::size_t b) {
    return stats[a].mean_dist > stats[b].mean_dist;
  });
  by_distance.resize(std::min(config.top_n, k));
  std::sort(by_distance.begin(), by_distance.end());
  for (std::size_t c : by_distance) {
    if (stats[c].members < 2 || stats[c].mu < config.u_p) continue;
    if (saturated(ledger.prototype_total(c), config.saturation)) continue;
    q.prototypes.push_back(stats[c]);
  }

  std::vector<ActionQuery> candidates;
  for (const StepPrediction& s : steps) {
    if (!is_risky(config.risk_side, s.a, s.a_expert)) continue;
    const double u = action_uncertainty(s.a);
    if (u < config.u_a) continue;
    if (saturated(ledger.action_total(s.bucket), config.saturation)) continue;
    candidates.push_back({data[s.traj].entity_id, s.traj, s.step, s.a, s.a_expert, u, true, s.bucket});
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const ActionQuery& a, const ActionQuery& b) {
    return std::abs(a.a - a.a_expert) > std::abs(b.a - b.a_expert);
  });
  std::vector<ActionBucket> asked;
  for (const ActionQuery& c : candidates) {
    if (q.actions.size() >= config.max_action_queries) break;
    if (std::find(asked.begin(), asked.end(), c.bucket) != asked.end()) continue;
    asked.push_back(c.bucket);
    q.actions.push_back(c);
  }

  if (k >= 2) {
    std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> pairs;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j)
        pairs.push_back({squared_distance(protos.embeddings.row_span(i), protos.embeddings.row_span(j)),
                         {i, j}});
    std::vector<double> sorted;
    for (const auto& p : pairs) sorted.push_back(p.first);
    std::sort(sorted.begin(), sorted.end());
    const double pos = config.merge_percentile * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double threshold = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    for (const auto& [d, ij] : pairs) {
      if (d < threshold && !saturated(ledger.pair_total(ij.first, ij.second), config.saturation))
        q.merges.push_back(ij);
    }
  }
  return q;
}

void apply_merge(PolicyModel& model, std::size_t i, std::size_t j) {
  PrototypeSet& ps = model.protos;
  const std::size_t k = ps.count();
  if (i == j || i >= k || j >= k) {
    throw ContractViolation("merge needs two distinct existing prototypes, got (" +
                            std::to_string(i) + ", " + std::to_string(j) + ") with K=" +
                            std::to_string(k));
  }
  const auto [lo, hi] = ordered(i, j);
  const std::size_t m = ps.width();
  Tensor emb(k - 1, m);
  Tensor head(k - 1, 1);
  std::vector<std::size_t> nearest;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t c = 0, out = 0; c < k; ++c) {
    if (c == hi) continue;
    auto dst = emb.row_span(out);
    if (c == lo) {
      for (std::size_t x = 0; x < m; ++x) dst[x] = 0.5 * (ps.embeddings(lo, x) + ps.embeddings(hi, x));
      head[out] = 0.5 * (model.head.weights[lo] + model.head.weights[hi]);
      auto joined = ps.members[lo];
      joined.insert(joined.end(), ps.members[hi].begin(), ps.members[hi].end());
      std::sort(joined.begin(), joined.end());
      members.push_back(std::move(joined));
    } else {
      auto src = ps.embeddings.row_span(c);
      std::copy(src.begin(), src.end(), dst.begin());
      head[out] = model.head.weights[c];
      members.push_back(ps.members[c]);
    }
    nearest.push_back(ps.nearest_expert.empty() ? 0 : ps.nearest_expert[c]);
    ++out;
  }
  ps.embeddings = std::move(emb);
  ps.members = std::move(members);
  ps.nearest_expert = std::move(nearest);
  model.head.weights = std::move(head);
}

std::size_t apply_split(PolicyModel& model, std::size_t k, const Tensor& embeddings) {
  PrototypeSet& ps = model.protos;
  if (k >= ps.count()) throw ContractViolation("split: no prototype " + std::to_string(k));
  const auto& members = ps.members[k];
  if (members.size() < 2) {
    throw ContractViolation("split needs at least two members; prototype " + std::to_string(k) +
                            " has " + std::to_string(members.size()));
  }
  std::size_t far = members.front(), near = members.front();
  double far_d = -1.0, near_d = 0.0;
  for (std::size_t mbr : members) {
    const double d = squared_distance(ps.embeddings.row_span(k), embeddings.row_span(mbr));
    if (d > far_d) {
      far_d = d;
      far = mbr;
    }
    if (mbr == members.front() || d < near_d) {
      near_d = d;
      near = mbr;
    }
  }
  const std::size_t old_k = ps.count();
  const std::size_t m = ps.width();
  Tensor emb(old_k + 1, m);
  std::copy(ps.embeddings.flat().begin(), ps.embeddings.flat().end(), emb.flat().begin());
  auto src = embeddings.row_span(far);
  std::copy(src.begin(), src.end(), emb.row_span(old_k).begin());
  Tensor head(old_k + 1, 1);
  std::copy(model.head.weights.flat().begin(), model.head.weights.flat().end(), head.flat().begin());
  head[old_k] = model.head.weights[k];

  std::vector<std::size_t> stay, move;
  for (std::size_t mbr : members) {
    const double d_old = squared_distance(emb.row_span(k), embeddings.row_span(mbr));
    const double d_new = squared_distance(emb.row_span(old_k), embeddings.row_span(mbr));
    // p_k always keeps its closest member
    (d_new < d_old && mbr != near ? move : stay).push_back(mbr);
  }
  ps.embeddings = std::move(emb);
  ps.members[k] = std::move(stay);
  ps.members.push_back(std::move(move));
  ps.nearest_expert.push_back(far);
  model.head.weights = std::move(head);
  return old_k;
}

LossBreakdown gated_full_loss(const PolicyModel& model, std::span<const Trajectory> data,
                              const LossWeights& weights, const FeedbackLedger& ledger) {
  const LossGates gates = ledger.gates(model.protos.count());
  return evaluate_objective(model, data, weights, &gates, false).losses;
}

std::vector<FeedbackEvent> ScriptedOracle::respond(
    const QuerySet& q, std::size_t k, std::span<const std::size_t> member_counts,
    const std::function<double(std::size_t, std::size_t)>& pair_distance) {
  std::vector<FeedbackEvent> votes;
  std::optional<FeedbackEvent> edit;
  auto event = [&](FeedbackKind kind, std::vector<std::size_t> target) {
    FeedbackEvent e;
    e.iteration = q.iteration;
    e.kind = kind;
    e.prototypes = std::move(target);
    return e;
  };

  for (const PrototypeQuery& p : q.prototypes) {
    const bool unstable = p.mu > rules_.downvote_mu;
    const bool risky = p.risk_share > rules_.risk_share;
    const bool down = rules_.require_both ? (unstable && risky) : (unstable || risky);
    if (rules_.allow_split && !edit && p.mu >= rules_.split_mu && p.members >= rules_.split_min_members) {
      edit = event(FeedbackKind::Split, {p.id});
      continue;
    }
    votes.push_back(event(down ? FeedbackKind::Down : FeedbackKind::Up, {p.id}));
  }
  if (rules_.downvote_risky_actions) {
    for (const ActionQuery& a : q.actions) {
      if (!a.risk) continue;
      FeedbackEvent e = event(FeedbackKind::Down, {});
      e.action = ActionRef{a.traj, a.step};
      e.bucket = a.bucket;
      votes.push_back(std::move(e));
    }
  }
  for (const auto& [i, j] : q.merges) {
    const bool redundant = (i < member_counts.size() && member_counts[i] <= rules_.redundant_members) ||
                           (j < member_counts.size() && member_counts[j] <= rules_.redundant_members);
    const bool close = pair_distance && pair_distance(i, j) < rules_.merge_distance;
    if (!edit && (redundant || close) && k > rules_.min_prototypes) {
      edit = event(FeedbackKind::Merge, {i, j});
    } else {
      votes.push_back(event(FeedbackKind::Down, {i, j}));
    }
  }
  if (edit) votes.push_back(std::move(*edit));
  for (FeedbackEvent& e : votes) e.seq = next_seq_++;
  return votes;
}

OracleRules parse_oracle_rules(const std::string& text) {
  OracleRules r;
  for (const KeyValue& kv : parse_key_values(text)) {
    if (kv.key == "downvote_mu") r.downvote_mu = parse_double(kv);
    else if (kv.key == "risk_share") r.risk_share = parse_double(kv);
    else if (kv.key == "require_both") r.require_both = parse_bool(kv);
    else if (kv.key == "downvote_risky_actions") r.downvote_risky_actions = parse_bool(kv);
    else if (kv.key == "redundant_members") r.redundant_members = static_cast<std::size_t>(parse_int(kv));
    else if (kv.key == "merge_distance") r.merge_distance = parse_double(kv);
    else if (kv.key == "min_prototypes") r.min_prototypes = static_cast<std::size_t>(parse_int(kv));
    else if (kv.key == "allow_split") r.allow_split = parse_bool(kv);
    else if (kv.key == "split_mu") r.split_mu = parse_double(kv);
    else if (kv.key == "split_min_members") r.split_min_members = static_cast<std::size_t>(parse_int(kv));
    else throw ConfigError("line " + std::to_string(kv.line) + ": unknown oracle rule '" + kv.key + "'");
  }
  return r;
}

std::string format_oracle_rules(const OracleRules& r) {
  auto b = [](bool v) { return v ? "true" : "false"; };
  return "downvote_mu = " + std::to_string(r.downvote_mu) + "\nrisk_share = " +
         std::to_string(r.risk_share) + "\nrequire_both = " + b(r.require_both) +
         "\ndownvote_risky_actions = " + b(r.downvote_risky_actions) +
         "\nredundant_members = " + std::to_string(r.redundant_members) +
         "\nmerge_distance = " + std::to_string(r.merge_distance) +
         "\nmin_prototypes = " + std::to_string(r.min_prototypes) +
         "\nallow_split = " + b(r.allow_split) + "\nsplit_mu = " + std::to_string(r.split_mu) +
         "\nsplit_min_members = " + std::to_string(r.split_min_members) + "\n";
}

}  // namespace protohail
