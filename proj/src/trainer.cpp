#include "protohail/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "protohail/baselines.hpp"

namespace protohail {

namespace {

constexpr std::uint64_t kPrototypeSeedSalt = 0x70726f746fULL;
constexpr std::uint64_t kBatchSeedSalt = 0x6261746368ULL;

std::vector<double> downsample(const std::vector<double>& xs, std::size_t cap) {
  if (xs.size() <= cap) return xs;
  std::vector<double> out(cap);
  for (std::size_t i = 0; i < cap; ++i) out[i] = xs[i * xs.size() / cap];
  return out;
}

std::size_t find_entity(std::span<const Trajectory> data, const std::string& id) {
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].entity_id == id) return i;
  return data.size();
}

}  // namespace

PolicyModel init_policy_model(std::span<const Trajectory> train, const ExperimentConfig& cfg) {
  if (train.empty()) throw ContractViolation("init_policy_model: empty training set");
  PolicyModel m;
  m.encoder = EncoderParams::init(train.front().width(), cfg.hidden, cfg.seed);
  m.encoder.normalizer = Normalizer::fit(train);
  std::vector<const Trajectory*> ptrs;
  for (const Trajectory& t : train) ptrs.push_back(&t);
  const std::size_t k = cfg.prototypes();
  if (k > train.size()) {
    throw ConfigError("k=" + std::to_string(k) + " exceeds the " + std::to_string(train.size()) +
                      " training trajectories");
  }
  m.protos = PrototypeSet::from_experts(encode_finals(ptrs, m.encoder), k, cfg.seed ^ kPrototypeSeedSalt);
  m.head = PolicyHead::zeros(k);
  m.imitation = cfg.imitation;
  return m;
}

std::vector<FeedbackEvent> OracleChannel::collect(const QuerySet* posed, const TrainingSnapshot& snapshot,
                                                  const PolicyModel& model) {
  if (!posed) return {};
  std::vector<std::size_t> counts;
  for (const PrototypeStats& p : snapshot.prototypes) counts.push_back(p.members);
  const Tensor& p = model.protos.embeddings;
  return oracle_.respond(*posed, model.protos.count(), counts, [&p](std::size_t i, std::size_t j) {
    return squared_distance(p.row_span(i), p.row_span(j));
  });
}

std::optional<std::string> event_problem(const FeedbackEvent& e, const PolicyModel& model,
                                         std::span<const Trajectory> data) {
  const std::size_t k = model.protos.count();
  for (std::size_t id : e.prototypes)
    if (id >= k) return "unknown prototype " + std::to_string(id) + " (K=" + std::to_string(k) + ")";
  switch (e.kind) {
    case FeedbackKind::Up:
    case FeedbackKind::Down:
      if (e.action) {
        if (!e.prototypes.empty()) return std::string("a vote targets either prototypes or an action");
        const std::size_t t = find_entity(data, e.action->traj);
        if (t == data.size()) return "unknown trajectory '" + e.action->traj + "'";
        if (e.action->step >= data[t].length()) return "step " + std::to_string(e.action->step) + " out of range";
        if (!data[t].steps[e.action->step].action) return std::string("step has no expert action");
        return std::nullopt;
      }
      if (e.prototypes.size() == 1) return std::nullopt;
      if (e.prototypes.size() == 2) {
        if (e.prototypes[0] == e.prototypes[1]) return std::string("a pair vote needs two distinct prototypes");
        return std::nullopt;
      }
      return std::string("a vote targets one prototype, a pair, or an action");
    case FeedbackKind::Merge:
      if (e.action || e.prototypes.size() != 2) return std::string("merge targets exactly two prototypes");
      if (e.prototypes[0] == e.prototypes[1]) return std::string("cannot merge a prototype with itself");
      return std::nullopt;
    case FeedbackKind::Split:
      if (e.action || e.prototypes.size() != 1) return std::string("split targets exactly one prototype");
      if (model.protos.members.size() == k && model.protos.members[e.prototypes[0]].size() < 2)
        return "prototype " + std::to_string(e.prototypes[0]) + " has fewer than two members";
      return std::nullopt;
  }
  return std::string("unknown feedback kind");
}

Trainer::Trainer(ExperimentConfig cfg, std::vector<Trajectory> train, FeedbackChannel* channel)
    : cfg_(std::move(cfg)), data_(std::move(train)), channel_(channel) {
  cfg_.validate();
  model_ = init_policy_model(data_, cfg_);
  shadow_.per_edit = cfg_.hitl.shadow;
  const auto params = model_.parameters();
  opt_ = OptimizerState(AdamConfig{cfg_.learning_rate}, std::vector<const Tensor*>(params.begin(), params.end()));
  rng_.seed(cfg_.seed ^ kBatchSeedSalt);
  refresh_view();
}

Trainer::Trainer(ExperimentConfig cfg, std::vector<Trajectory> train, const Checkpoint& from,
                 FeedbackChannel* channel)
    : cfg_(std::move(cfg)), data_(std::move(train)), channel_(channel) {
  cfg_.validate();
  if (!from.model) throw ConfigError("checkpoint has no prototype model to resume");
  if (data_.empty()) throw ContractViolation("Trainer: empty training set");
  model_ = *from.model;
  ledger_ = from.ledger;
  shadow_ = from.shadow;
  if (from.optimizer) {
    opt_ = *from.optimizer;
  } else {
    const auto params = model_.parameters();
    opt_ = OptimizerState(AdamConfig{cfg_.learning_rate}, std::vector<const Tensor*>(params.begin(), params.end()));
  }
  std::istringstream rs(from.rng_state);
  rs >> rng_;
  if (!rs) throw ConfigError("checkpoint has a malformed rng_state");
  iteration_ = from.iteration;
  queries_ = from.queries;
  refresh_view();
}

bool Trainer::hitl_active() const noexcept { return cfg_.hitl.enabled && cfg_.hitl.source != FeedbackSource::None; }

bool Trainer::query_due() const noexcept {
  return hitl_active() && channel_ != nullptr && iteration_ > 0 && iteration_ % cfg_.hitl.frequency == 0 &&
         shadow_.remaining == 0;
}

void Trainer::refresh_view() {
  const LossGates gates = ledger_.gates(model_.protos.count());
  ObjectiveResult r = evaluate_objective(model_, data_, cfg_.weights, hitl_active() ? &gates : nullptr, false);
  model_.protos.set_assignment(r.assignment);
  model_.protos.nearest_expert = r.nearest;
  finals_ = std::move(r.finals);
  last_losses_ = r.losses;
  steps_.clear();
  std::size_t row = 0;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    for (std::size_t t = 0; t < data_[i].length(); ++t) {
      const auto& a = data_[i].steps[t].action;
      if (!a) continue;
      steps_.push_back({i, t, r.actions[row], *a, r.buckets[row]});
      ++row;
    }
  }
  view_at_ = iteration_;
}

std::optional<ActionBucket> Trainer::resolve_bucket(const ActionRef& ref) const {
  const std::size_t t = find_entity(data_, ref.traj);
  if (t == data_.size()) return std::nullopt;
  const Tensor h = encode_all_prefixes(data_[t], model_.encoder);
  if (ref.step >= h.rows()) return std::nullopt;
  const auto row = h.row_span(ref.step);
  const Tensor sim = similarity(row, model_.protos.embeddings);
  return action_bucket(sim.flat(), act_from_embedding(row, model_));
}

std::size_t Trainer::apply_events(std::vector<FeedbackEvent> events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const FeedbackEvent& a, const FeedbackEvent& b) { return a.seq < b.seq; });
  std::size_t applied = 0;
  last_rejected_ = 0;
  for (FeedbackEvent& e : events) {
    try {
      ledger_.check_sequence(e.seq);
    } catch (const ReplayError&) {
      ++last_rejected_;
      continue;
    }
    if (event_problem(e, model_, data_)) {
      ++last_rejected_;
      continue;
    }
    if (e.action && !e.bucket) {
      e.bucket = resolve_bucket(*e.action);
      if (!e.bucket) {
        ++last_rejected_;
        continue;
      }
    }
    if (e.kind == FeedbackKind::Split && view_at_ != iteration_) refresh_view();
    ledger_.record(e);
    if (e.kind == FeedbackKind::Merge) {
      const std::size_t i = e.prototypes[0], j = e.prototypes[1];
      apply_merge(model_, i, j);
      ledger_.remap_after_merge(i, j);
    } else if (e.kind == FeedbackKind::Split) {
      const std::size_t before = model_.protos.count();
      apply_split(model_, e.prototypes[0], finals_);
      ledger_.remap_after_split(before);
    }
    if (e.kind == FeedbackKind::Merge || e.kind == FeedbackKind::Split) {
      opt_.reset_slot(kPrototypeSlot, model_.protos.embeddings);
      opt_.reset_slot(kHeadWeightSlot, model_.head.weights);
      shadow_.on_edit();
    }
    ++applied;
  }
  return applied;
}

TrainingSnapshot Trainer::snapshot() const {
  TrainingSnapshot s;
  s.iteration = iteration_;
  s.losses = last_losses_;
  s.k = model_.protos.count();
  s.queries = pending_;
  for (std::size_t k = 0; k < s.k; ++k) {
    PrototypeStats p;
    p.id = k;
    const bool has_members = model_.protos.members.size() == s.k;
    p.members = has_members ? model_.protos.members[k].size() : 0;
    p.mu = has_members ? prototype_uncertainty(model_.protos, finals_, k) : 0.0;
    p.mean_dist = has_members ? mean_member_distance(model_.protos, finals_, k) : 0.0;
    p.votes = ledger_.prototype_total(k);
    if (k < model_.protos.nearest_expert.size() && model_.protos.nearest_expert[k] < data_.size()) {
      const Trajectory& ex = data_[model_.protos.nearest_expert[k]];
      p.explanation_id = ex.entity_id;
      std::vector<double> series;
      for (const Step& st : ex.steps) series.push_back(st.action.value_or(0.0));
      p.series = downsample(series, kSnapshotSeriesPoints);
    }
    s.prototypes.push_back(std::move(p));
  }
  return s;
}

Trainer::BoundaryInfo Trainer::boundary(bool final) {
  BoundaryInfo info;
  const bool due = !final && query_due();
  const bool want_view = final || due || (channel_ && channel_->wants_snapshots());
  if (want_view && view_at_ != iteration_) refresh_view();

  QuerySet posed;
  if (due) {
    posed = build_query(iteration_, model_.protos, finals_, data_, steps_, ledger_, cfg_.query_config());
    if (!posed.empty()) {
      ++queries_;
      pending_ = posed;
      info.queried = true;
      info.prototypes = posed.prototypes.size();
      info.actions = posed.actions.size();
      info.merges = posed.merges.size();
    }
  }
  if (!channel_) return info;
  TrainingSnapshot snap = snapshot();
  snap.final = final;
  if (want_view) channel_->publish(snap);
  if (final) return info;
  std::vector<FeedbackEvent> events = channel_->collect(info.queried ? &posed : nullptr, snap, model_);
  if (!events.empty()) {
    info.applied = apply_events(std::move(events));
    info.rejected = last_rejected_;
    pending_ = QuerySet{};
  }
  return info;
}

bool Trainer::step() {
  if (iteration_ >= budget()) return false;
  const BoundaryInfo info = boundary(false);
  if (iteration_ >= budget()) return false;

  IterationLog entry;
  entry.iteration = iteration_;
  entry.queried = info.queried;
  entry.query_prototypes = info.prototypes;
  entry.query_actions = info.actions;
  entry.query_merges = info.merges;
  entry.events_applied = info.applied;
  entry.events_rejected = info.rejected;
  entry.k = model_.protos.count();

  const LossGates gates = ledger_.gates(model_.protos.count());
  const LossGates* g = hitl_active() ? &gates : nullptr;
  const auto batches = epoch_batches(data_.size(), cfg_.batch_size, rng_);
  std::vector<Trajectory> batch;
  LossBreakdown sum;
  for (const auto& idx : batches) {
    batch.clear();
    for (std::size_t i : idx) batch.push_back(data_[i]);
    ObjectiveResult r = evaluate_objective(model_, batch, cfg_.weights, g, true);
    if (!std::isfinite(r.losses.total)) throw NumericError("total", "training loss is not finite");
    optimizer_step(opt_, model_.parameters(), r.grads);
    sum.rep += r.losses.rep;
    sum.div += r.losses.div;
    sum.intr += r.losses.intr;
    sum.im += r.losses.im;
    sum.total += r.losses.total;
  }
  const double n = static_cast<double>(batches.size());
  entry.losses = {sum.rep / n, sum.div / n, sum.intr / n, sum.im / n, sum.total / n};
  entry.shadow = shadow_.remaining > 0;
  if (shadow_.remaining > 0) --shadow_.remaining;
  ++iteration_;
  log_.push_back(entry);
  return true;
}

void Trainer::run() {
  try {
    while (step()) {
    }
    boundary(true);
  } catch (const NumericError& e) {
    if (!diagnostic_path.empty()) {
      Checkpoint c = checkpoint();
      c.diagnostic = e.what();
      save_checkpoint(diagnostic_path, c);
    }
    throw;
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.kind = "protohail";
  c.config_text = format_config(cfg_);
  c.config_hash = config_hash(cfg_);
  c.model = model_;
  c.ledger = ledger_;
  c.shadow = shadow_;
  c.optimizer = opt_;
  c.iteration = iteration_;
  c.queries = queries_;
  std::ostringstream rs;
  rs << rng_;
  c.rng_state = rs.str();
  return c;
}

}  // namespace protohail
