// Acceptance suite: runs every exit criterion at its pinned tolerance and
// prints one PASS/FAIL line per criterion. Exits non-zero when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "protohail/checkpoint.hpp"
#include "protohail/experiment.hpp"
#include "protohail/hitl.hpp"
#include "protohail/numerics.hpp"
#include "protohail/policy.hpp"
#include "protohail/prototypes.hpp"
#include "protohail/sim_cloud.hpp"
#include "protohail/trainer.hpp"
#include "test_helpers.hpp"

using namespace protohail;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kQuadraticTolerance = 1e-9;
constexpr double kIntTolerance = 1e-3;
constexpr int kIntSteps = 2000;
constexpr std::uint64_t kNeutralIterations = 50;
constexpr std::size_t kShadowPerEdit = 30;
constexpr double kRunSeconds = 300.0;
constexpr std::size_t kMaxQueries = 10;

// 4 of 5 seeds; other seed counts keep the same 80% share, rounded up.
std::size_t majority(std::size_t seeds) { return (4 * seeds + 4) / 5; }

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  explicit Verdict(std::string n) : name(std::move(n)) {}
  std::string name;
  bool pass = false;
  std::string detail;
  std::vector<std::string> notes;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::vector<Tensor> copy_params(const PolicyModel& m) {
  std::vector<Tensor> out;
  for (const Tensor* t : m.parameters()) out.push_back(*t);
  return out;
}

bool same_params(const PolicyModel& a, const PolicyModel& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->rows() != pb[i]->rows() || pa[i]->data() != pb[i]->data()) return false;
  return true;
}

PolicyModel random_model(std::uint64_t seed, std::size_t d, std::size_t m, std::size_t k) {
  std::mt19937_64 rng(seed);
  PolicyModel model;
  model.encoder = EncoderParams::init(d, m, seed);
  model.protos.embeddings = testutil::random_tensor(k, m, rng);
  model.protos.members.assign(k, {});
  model.protos.nearest_expert.assign(k, 0);
  model.head = PolicyHead::zeros(k);
  model.head.weights = testutil::random_tensor(k, 1, rng, -2.0, 2.0);
  model.head.bias = testutil::random_tensor(1, 1, rng);
  return model;
}

std::vector<Trajectory> random_data(std::mt19937_64& rng, std::size_t n, std::size_t width) {
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(testutil::random_trajectory(2 + i % 3, width, rng, "t" + std::to_string(i)));
  return out;
}

FeedbackEvent event(std::uint64_t seq, FeedbackKind kind, std::vector<std::size_t> target) {
  FeedbackEvent e;
  e.seq = seq;
  e.kind = kind;
  e.prototypes = std::move(target);
  return e;
}

// ---------------------------------------------------------------------------

Verdict gradient_integrity() {
  Verdict v{"gradient integrity"};
  const auto start = Clock::now();
  std::map<std::string, double> worst;
  auto check = [&](const std::string& loss, const LossFn& f, const std::vector<Tensor>& params) {
    const auto g = grad(f, params);
    const auto fd = finite_diff_grad(f, params);
    double& w = worst[loss];
    for (std::size_t i = 0; i < g.size(); ++i) w = std::max(w, relative_error(g[i], fd[i]));
  };

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor p = testutil::random_tensor(3, 4, rng);
    const Tensor e = testutil::random_tensor(9, 4, rng);
    const auto members = assign(e, p);
    const auto near = nearest_experts(p, e);
    const std::vector<Tensor> pe{p, e};
    check("rep", [&](ad::Tape&, std::span<const ad::Var> x) { return loss_rep(x[0], x[1], members); }, pe);
    check("div", [&](ad::Tape& tape, std::span<const ad::Var> x) { return loss_div(tape, x[0]); }, pe);
    check("int", [&](ad::Tape&, std::span<const ad::Var> x) { return loss_int(x[0], x[1], near); }, pe);

    const Tensor b = testutil::random_tensor(3, 1, rng, -2.0, 2.0);
    const Tensor c = testutil::random_tensor(1, 1, rng);
    std::uniform_real_distribution<double> label(0.02, 0.98);
    std::vector<double> labels(9);
    for (double& l : labels) l = label(rng);
    for (ImitationLoss kind : {ImitationLoss::CrossEntropy, ImitationLoss::SquaredError}) {
      check(kind == ImitationLoss::CrossEntropy ? "im(ce)" : "im(se)",
            [&](ad::Tape&, std::span<const ad::Var> x) {
              return imitation_loss(head_actions(similarity(x[1], x[0]), x[2], x[3]), labels, kind);
            },
            {p, e, b, c});
    }

    PolicyModel m = random_model(seed, 2, 4, 3);
    const auto data = random_data(rng, 4, 2);
    for (ImitationLoss kind : {ImitationLoss::CrossEntropy, ImitationLoss::SquaredError}) {
      m.imitation = kind;
      check(kind == ImitationLoss::CrossEntropy ? "full(ce)" : "full(se)",
            [&](ad::Tape& tape, std::span<const ad::Var> x) {
              return build_objective(tape, model_vars_from(x, 4), m, data, LossWeights{}, nullptr).total;
            },
            copy_params(m));
    }
    m.imitation = ImitationLoss::CrossEntropy;

    FeedbackLedger ledger;
    ledger.record(event(1, FeedbackKind::Down, {0}));
    ledger.record(event(2, FeedbackKind::Up, {1, 2}));
    FeedbackEvent on_action = event(3, FeedbackKind::Down, {});
    on_action.action = ActionRef{"t0", 0};
    on_action.bucket = evaluate_objective(m, data, LossWeights{}, nullptr, false).buckets[0];
    ledger.record(on_action);
    const LossGates gates = ledger.gates(3);
    check("gated full",
          [&](ad::Tape& tape, std::span<const ad::Var> x) {
            return build_objective(tape, model_vars_from(x, 4), m, data, LossWeights{}, &gates).total;
          },
          copy_params(m));
  }

  const double secs = seconds_since(start);
  double overall = 0.0;
  for (const auto& [loss, w] : worst) {
    overall = std::max(overall, w);
    v.notes.push_back(loss + ": worst relative error " + fmt(w));
  }
  v.pass = overall < kGradTolerance && secs < kGradSeconds;
  v.detail = "20 seeds, worst " + fmt(overall) + " (< " + fmt(kGradTolerance) + "), " + fixed(secs, 1) + " s (< 60)";
  return v;
}

Verdict quadratic_equivalence() {
  Verdict v{"quadratic equivalence"};
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 1000; ++trial) {
    std::mt19937_64 rng(trial + 1000);
    const std::size_t m = 2 + trial % 15;
    const PolicyModel model = random_model(trial, 2, m, 1 + trial % 6);
    const QuadraticView q = quadratic_view(model);
    const Tensor h = testutil::random_tensor(1, m, rng, -2.0, 2.0);
    worst = std::max(worst, std::abs(q.logit(h.flat()) - logit(h.flat(), model)));
  }
  v.pass = worst < kQuadraticTolerance;
  v.detail = "1000 (model, h) pairs, worst |difference| " + fmt(worst) + " (< 1e-09)";
  return v;
}

Verdict loss_identities() {
  Verdict v{"loss identities"};
  const auto start = Clock::now();
  bool rep_zero = true, div_zero = true;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(trial);
    const std::size_t k = 2 + trial % 5, m = 3 + trial % 7, n = k + trial % 11;
    const Tensor p = testutil::random_tensor(k, m, rng);
    std::vector<std::size_t> members(n);
    Tensor e(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      members[i] = i < k ? i : rng() % k;
      for (std::size_t c = 0; c < m; ++c) e(i, c) = p(members[i], c);
    }
    rep_zero = rep_zero && loss_rep(p, e, members) == 0.0 && assign(e, p) == members;

    Tensor dup(k, m);
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < m; ++c) dup(r, c) = p(0, c);
    div_zero = div_zero && loss_div(dup) == 0.0;
  }

  double worst_int = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed + 21);
    const Tensor experts = testutil::random_tensor(10, 8, rng);
    Tensor p = testutil::random_tensor(3, 8, rng, -2.0, 2.0);
    Tensor* ptrs[] = {&p};
    const Tensor* cptrs[] = {&p};
    OptimizerState st(AdamConfig{}, cptrs);
    for (int step = 0; step < kIntSteps; ++step) {
      const auto near = nearest_experts(p, experts);
      LossFn f = [&](ad::Tape& tape, std::span<const ad::Var> x) {
        return loss_int(x[0], tape.constant(experts), near);
      };
      const std::vector<Tensor> cur{p};
      optimizer_step(st, ptrs, grad(f, cur));
    }
    worst_int = std::max(worst_int, loss_int(p, experts).value);
  }
  const double secs = seconds_since(start);
  v.pass = rep_zero && div_zero && worst_int < kIntTolerance && secs < 60.0;
  v.detail = std::string("rep ") + (rep_zero ? "= 0" : "!= 0") + " on 100 sets, div " +
             (div_zero ? "= 0" : "!= 0") + " for duplicates, int after 2000 steps " + fmt(worst_int) +
             " (< 1e-3), " + fixed(secs, 1) + " s";
  return v;
}

class SilentChannel final : public FeedbackChannel {
 public:
  bool wants_snapshots() const override { return true; }
  std::vector<FeedbackEvent> collect(const QuerySet* posed, const TrainingSnapshot&, const PolicyModel&) override {
    posed_ += posed != nullptr;
    return {};
  }
  std::size_t posed() const { return posed_; }

 private:
  std::size_t posed_ = 0;
};

Verdict gate_neutrality() {
  Verdict v{"gate neutrality"};
  ExperimentConfig cfg;
  cfg.seed = 0;
  cfg.epochs = kNeutralIterations;
  const DomainData data = generate_domain(cfg);
  const auto train = split_by_entity(data.trajectories, cfg.train_fraction, cfg.seed).train;

  ExperimentConfig off = cfg;
  off.hitl.enabled = false;
  Trainer plain(off, train);
  plain.run();
  SilentChannel silent;
  Trainer gated(cfg, train, &silent);
  gated.run();

  bool same = plain.log().size() == kNeutralIterations && gated.log().size() == kNeutralIterations;
  for (std::size_t i = 0; same && i < plain.log().size(); ++i) {
    const LossBreakdown& a = plain.log()[i].losses;
    const LossBreakdown& b = gated.log()[i].losses;
    same = a.rep == b.rep && a.div == b.div && a.intr == b.intr && a.im == b.im && a.total == b.total;
  }
  same = same && same_params(plain.model(), gated.model()) && gated.ledger().empty();
  v.pass = same;
  v.detail = "cloud seed 0, " + std::to_string(kNeutralIterations) + " iterations, " +
             std::to_string(silent.posed()) + " unanswered queries, loss curves " +
             (same ? "bit-identical" : "differ");
  return v;
}

class ScheduledChannel final : public FeedbackChannel {
 public:
  std::map<std::uint64_t, std::vector<FeedbackEvent>> plan;
  std::vector<FeedbackEvent> collect(const QuerySet*, const TrainingSnapshot& s, const PolicyModel&) override {
    auto it = plan.find(s.iteration);
    if (it == plan.end()) return {};
    auto out = std::move(it->second);
    plan.erase(it);
    return out;
  }
};

Verdict structural_edits() {
  Verdict v{"HITL structural edits"};
  bool merge_ok = true;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(trial);
    const std::size_t k = 2 + trial % 5;
    PolicyModel m = random_model(trial, 2, 5, k);
    m.protos.members.assign(k, {});
    for (std::size_t i = 0; i < 3 * k; ++i) m.protos.members[i % k].push_back(i);
    const std::size_t i = rng() % k;
    std::size_t j = rng() % (k - 1);
    if (j >= i) ++j;
    const PolicyModel before = m;
    apply_merge(m, i, j);
    const std::size_t lo = std::min(i, j), hi = std::max(i, j);
    merge_ok = merge_ok && m.protos.count() == k - 1 && m.head.count() == k - 1 && m.protos.is_partition(3 * k);
    for (std::size_t c = 0; merge_ok && c < 5; ++c)
      merge_ok = m.protos.embeddings(lo, c) ==
                 (before.protos.embeddings(i, c) + before.protos.embeddings(j, c)) / 2.0;
    // survivors keep their rows, shifted past the removed index
    for (std::size_t r = 0, out = 0; merge_ok && r < k; ++r) {
      if (r == hi) continue;
      if (r != lo)
        for (std::size_t c = 0; c < 5; ++c) merge_ok = merge_ok && m.protos.embeddings(out, c) == before.protos.embeddings(r, c);
      ++out;
    }
  }

  bool split_ok = true;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    std::mt19937_64 rng(trial + 500);
    std::normal_distribution<double> noise(0.0, 0.1);
    Tensor emb(20, 4);
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t c = 0; c < 4; ++c) emb(i, c) = (i < 10 ? 0.0 : 5.0) + noise(rng);
    PolicyModel m = random_model(trial, 2, 4, 2);
    for (std::size_t c = 0; c < 4; ++c) {
      m.protos.embeddings(0, c) = 0.5 + noise(rng);
      m.protos.embeddings(1, c) = -50.0;
    }
    m.protos.members = {{}, {}};
    for (std::size_t i = 0; i < 20; ++i) m.protos.members[0].push_back(i);
    std::size_t farthest = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < 20; ++i) {
      double d = 0.0;
      for (std::size_t c = 0; c < 4; ++c) d += std::pow(emb(i, c) - m.protos.embeddings(0, c), 2);
      if (d > best) {
        best = d;
        farthest = i;
      }
    }
    const std::size_t added = apply_split(m, 0, emb);
    split_ok = split_ok && added == 2 && m.protos.count() == 3 && m.protos.is_partition(20);
    for (std::size_t c = 0; split_ok && c < 4; ++c) split_ok = m.protos.embeddings(2, c) == emb(farthest, c);
    std::vector<std::size_t> far_blob;
    for (std::size_t i = 10; i < 20; ++i) far_blob.push_back(i);
    split_ok = split_ok && farthest >= 10 && m.protos.members[2] == far_blob;
  }

  bool iterations_ok = true;
  std::string iteration_note;
  for (std::size_t edits : {0u, 1u, 2u, 3u}) {
    std::mt19937_64 rng(edits);
    std::vector<Trajectory> data;
    for (std::size_t i = 0; i < 9; ++i) data.push_back(testutil::random_trajectory(6, 3, rng, "e" + std::to_string(i)));
    ExperimentConfig cfg;
    cfg.k = 3;
    cfg.hidden = 6;
    cfg.epochs = 12;
    ScheduledChannel ch;
    const FeedbackKind kinds[] = {FeedbackKind::Merge, FeedbackKind::Split, FeedbackKind::Merge};
    const std::vector<std::size_t> targets[] = {{0, 2}, {0}, {0, 1}};
    for (std::size_t e = 0; e < edits; ++e) ch.plan[2 + 4 * e] = {event(e + 1, kinds[e], targets[e])};
    Trainer t(cfg, data, &ch);
    t.run();
    const std::uint64_t expected = 12 + kShadowPerEdit * edits;
    iterations_ok = iterations_ok && t.edit_count() == edits && t.iteration() == expected;
    iteration_note += (iteration_note.empty() ? "" : ", ") + std::to_string(t.iteration()) + "/" + std::to_string(expected);
  }

  v.pass = merge_ok && split_ok && iterations_ok;
  v.detail = std::string("merge mean ") + (merge_ok ? "exact" : "wrong") + " on 100 models, split " +
             (split_ok ? "takes the farthest member" : "wrong") + " on 20 two-blob sets, iterations " +
             iteration_note;
  return v;
}

std::vector<std::optional<std::size_t>> exhaustive_best_fit(const std::vector<cloud::VmRequest>& vms,
                                                            const std::vector<cloud::Node>& nodes) {
  std::vector<std::optional<std::size_t>> where(vms.size());
  for (std::size_t v = 0; v < vms.size(); ++v) {
    int best_left = std::numeric_limits<int>::max();
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      int cores = 0;
      double mem = 0.0;
      for (std::size_t u = 0; u < v; ++u)
        if (where[u] == n) {
          cores += vms[u].cores;
          mem += vms[u].memory_gb;
        }
      const int left = nodes[n].cores - cores - vms[v].cores;
      if (left >= 0 && mem + vms[v].memory_gb <= nodes[n].memory_gb && left < best_left) {
        best_left = left;
        where[v] = n;
      }
    }
  }
  return where;
}

Verdict best_fit_oracle() {
  Verdict v{"Best-Fit oracle"};
  std::mt19937_64 rng(2024);
  std::size_t matched = 0;
  for (int instance = 0; instance < 100; ++instance) {
    const std::size_t nv = 1 + rng() % 20, nn = 1 + rng() % 5;
    std::vector<cloud::VmRequest> vms;
    for (std::size_t i = 0; i < nv; ++i) vms.push_back({1 + static_cast<int>(rng() % 16), 1.0 + static_cast<double>(rng() % 40)});
    std::vector<cloud::Node> nodes;
    for (std::size_t i = 0; i < nn; ++i) nodes.push_back({8 + static_cast<int>(rng() % 40), 40.0 + static_cast<double>(rng() % 100)});
    matched += cloud::allocate_best_fit(vms, nodes).node_of == exhaustive_best_fit(vms, nodes);
  }
  v.pass = matched == 100;
  v.detail = std::to_string(matched) + "/100 instances match the exhaustive search";
  return v;
}

// ---------------------------------------------------------------------------

struct CloudSeed {
  std::uint64_t seed = 0;
  double grid = 0, ma = 0, proto_hot = 0, bc_hot = 0, proto_cores = 0, bc_cores = 0, seconds = 0;
  std::size_t queries = 0;
  std::map<std::size_t, double> sweep_risk;
  std::string sweep_table;
  double proto_pressure = 0, bc_pressure = 0;
};

struct AirlineSeed {
  std::uint64_t seed = 0;
  double proto_cost = 0, bc_cost = 0, proto_profit = 0, ma_profit = 0, seconds = 0;
  std::size_t queries = 0;
};

ExperimentConfig domain_config(Domain d, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.domain = d;
  cfg.seed = seed;
  return cfg;
}

std::string seed_tag(std::uint64_t seed) { return "seed " + std::to_string(seed) + ": "; }

Verdict cloud_table(const std::vector<CloudSeed>& runs) {
  Verdict v{"directional cloud Table 1"};
  bool a = true, b = true, d = true, timely = true;
  std::size_t c = 0;
  for (const CloudSeed& r : runs) {
    a = a && r.grid == 0.0;
    b = b && r.ma > 0.0;
    d = d && r.queries <= kMaxQueries;
    timely = timely && r.seconds <= kRunSeconds;
    const bool wins = r.proto_hot <= r.bc_hot && r.proto_cores >= r.bc_cores;
    c += wins;
    v.notes.push_back(seed_tag(r.seed) + "hot % ProtoHAIL " + fixed(r.proto_hot * 100, 2) + " BC " + fixed(r.bc_hot * 100, 2) +
                      " grid " + fixed(r.grid * 100, 2) + " MA " + fixed(r.ma * 100, 2) + "; cores ProtoHAIL " +
                      fixed(r.proto_cores, 0) + " BC " + fixed(r.bc_cores, 0) + "; queries " + std::to_string(r.queries) +
                      "; " + fixed(r.seconds, 0) + " s");
  }
  const bool c_ok = c >= majority(runs.size());
  v.pass = a && b && c_ok && d && timely;
  v.detail = std::string("(a) grid 0% ") + (a ? "yes" : "no") + ", (b) MA > 0 " + (b ? "yes" : "no") +
             ", (c) ProtoHAIL beats BC on " + std::to_string(c) + "/" + std::to_string(runs.size()) +
             " (need " + std::to_string(majority(runs.size())) + "), (d) queries <= 10 " + (d ? "yes" : "no") + ", runs <= 300 s " + (timely ? "yes" : "no");
  return v;
}

Verdict airline_table(const std::vector<AirlineSeed>& runs) {
  Verdict v{"directional airline result"};
  std::size_t wins = 0;
  for (const AirlineSeed& r : runs) {
    const bool ok = r.proto_cost <= r.bc_cost && r.proto_profit >= r.ma_profit;
    wins += ok;
    v.notes.push_back(seed_tag(r.seed) + "cost ProtoHAIL " + fixed(r.proto_cost, 0) + " BC " + fixed(r.bc_cost, 0) +
                      "; profit ProtoHAIL " + fixed(r.proto_profit, 0) + " MA " + fixed(r.ma_profit, 0) + "; queries " +
                      std::to_string(r.queries) + "; " + fixed(r.seconds, 0) + " s");
  }
  v.pass = wins >= majority(runs.size());
  v.detail = "cost <= BC and profit >= MA on " + std::to_string(wins) + "/" + std::to_string(runs.size()) + " (need " + std::to_string(majority(runs.size())) + ")";
  return v;
}

Verdict k_sweep(const std::vector<CloudSeed>& runs, std::size_t selected) {
  Verdict v{"K-sweep"};
  std::size_t wins = 0;
  bool complete = true;
  for (const CloudSeed& r : runs) {
    complete = complete && r.sweep_risk.size() == 5 && !r.sweep_table.empty();
    const bool ok = r.sweep_risk.count(selected) && r.sweep_risk.count(2) && r.sweep_risk.at(selected) <= r.sweep_risk.at(2);
    wins += ok;
    std::string line = seed_tag(r.seed) + "hot %";
    for (const auto& [k, risk] : r.sweep_risk) line += " K=" + std::to_string(k) + " " + fixed(risk * 100, 2);
    v.notes.push_back(line);
  }
  v.pass = complete && wins >= majority(runs.size());
  v.detail = "K in {2..6} " + std::string(complete ? "complete" : "incomplete") + ", risk at K=" +
             std::to_string(selected) + " <= K=2 on " + std::to_string(wins) + "/" + std::to_string(runs.size()) +
             " (need " + std::to_string(majority(runs.size())) + ")";
  return v;
}

Verdict pressure(const std::vector<CloudSeed>& runs, double threshold) {
  Verdict v{"pressure test"};
  std::size_t wins = 0;
  for (const CloudSeed& r : runs) {
    wins += r.proto_pressure <= r.bc_pressure;
    v.notes.push_back(seed_tag(r.seed) + "hot % at " + fixed(threshold, 2) + ": ProtoHAIL " + fixed(r.proto_pressure * 100, 2) +
                      " BC " + fixed(r.bc_pressure * 100, 2));
  }
  v.pass = wins >= majority(runs.size());
  v.detail = "threshold " + fixed(threshold, 2) + ", ProtoHAIL <= BC on " + std::to_string(wins) + "/" +
             std::to_string(runs.size()) + " (need " + std::to_string(majority(runs.size())) + ")";
  return v;
}

bool same_rows(const Table1& a, const Table1& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const MethodResult& x = a.rows[i];
    const MethodResult& y = b.rows[i];
    if (x.method != y.method || x.risk != y.risk || x.benefit != y.benefit || x.reward != y.reward ||
        x.rates != y.rates)
      return false;
  }
  return true;
}

Verdict determinism(const Table1& first, const Table1& cloud) {
  Verdict v{"determinism and persistence"};
  const Table1 again = run_table1(domain_config(first.data.domain, first.seed));
  const bool rerun = same_rows(first, again) && first.protohail.queries == again.protohail.queries &&
                     to_json(first.protohail.checkpoint).dump() == to_json(again.protohail.checkpoint).dump();

  const Checkpoint& c = cloud.protohail.checkpoint;
  const std::string text = to_json(c).dump();
  const Checkpoint parsed = checkpoint_from_json(nlohmann::json::parse(text));
  const std::string path = (std::filesystem::temp_directory_path() / "protohail_acceptance_ckpt.json").string();
  save_checkpoint(path, c);
  const Checkpoint loaded = load_checkpoint(path);
  std::remove(path.c_str());
  bool round_trip = to_json(parsed).dump() == text && to_json(loaded).dump() == text && loaded.model &&
                    c.model && same_params(*loaded.model, *c.model);
  for (const Trajectory& t : cloud.data.trajectories) {
    if (!round_trip) break;
    round_trip = act_all_prefixes(t, *loaded.model) == act_all_prefixes(t, *c.model);
  }
  v.pass = rerun && round_trip;
  v.detail = to_string(first.data.domain) + " seed " + std::to_string(first.seed) + " rerun " +
             (rerun ? "bit-identical" : "differs") + ", cloud checkpoint round trip " +
             (round_trip ? "bit-exact" : "differs");
  return v;
}

void print(const Verdict& v) {
  std::cout << (v.pass ? "PASS" : "FAIL") << "  " << v.name << ": " << v.detail << "\n";
  for (const std::string& n : v.notes) std::cout << "      " << n << "\n";
  std::cout.flush();
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"acceptance suite"};
  std::uint64_t first_seed = 0;
  std::size_t seeds = 5;
  std::string tables_dir;
  app.add_option("--first-seed", first_seed, "first experiment seed");
  app.add_option("--seeds", seeds, "number of experiment seeds")->check(CLI::Range(1, 100));
  app.add_option("--tables", tables_dir, "directory for the generated result tables");
  bool properties_only = false;
  app.add_flag("--properties-only", properties_only, "skip the experiment criteria");
  CLI11_PARSE(app, argc, argv);

  std::vector<Verdict> verdicts;
  auto run = [&](const char* what, const std::function<Verdict()>& f) {
    std::cerr << "[acceptance] " << what << "\n";
    verdicts.push_back(f());
    print(verdicts.back());
  };

  run("gradient integrity", gradient_integrity);
  run("quadratic equivalence", quadratic_equivalence);
  run("loss identities", loss_identities);
  run("gate neutrality", gate_neutrality);
  run("structural edits", structural_edits);
  run("best fit", best_fit_oracle);
  if (properties_only) {
    std::size_t passed = 0;
    for (const Verdict& v : verdicts) passed += v.pass;
    std::cout << "\n" << passed << "/" << verdicts.size() << " property criteria passed, experiments skipped\n";
    return passed == verdicts.size() ? 0 : 1;
  }

  auto write_table = [&](const std::string& name, const std::string& body) {
    if (tables_dir.empty()) return;
    std::filesystem::create_directories(tables_dir);
    std::ofstream(std::filesystem::path(tables_dir) / name) << body;
  };

  const ExperimentConfig cloud_defaults = domain_config(Domain::Cloud, 0);
  const std::size_t selected_k = cloud_defaults.prototypes();
  std::vector<CloudSeed> cloud_runs;
  std::optional<Table1> cloud_first;
  for (std::uint64_t s = first_seed; s < first_seed + seeds; ++s) {
    std::cerr << "[acceptance] cloud seed " << s << "\n";
    const ExperimentConfig cfg = domain_config(Domain::Cloud, s);
    Table1 t = run_table1(cfg);
    CloudSeed r;
    r.seed = s;
    r.grid = t.row("Grid-search").risk;
    r.ma = t.row("Moving Average").risk;
    r.proto_hot = t.row("ProtoHAIL").risk;
    r.bc_hot = t.row("BC").risk;
    r.proto_cores = t.row("ProtoHAIL").benefit;
    r.bc_cores = t.row("BC").benefit;
    r.queries = t.protohail.queries;
    r.seconds = t.seconds;
    write_table("cloud_table1_seed" + std::to_string(s) + ".md", format_table1(t));

    const auto pr = run_pressure(t, cfg);
    for (const PressureRow& p : pr) (p.method == "ProtoHAIL" ? r.proto_pressure : r.bc_pressure) = p.hot_rate_pressure;
    write_table("cloud_pressure_seed" + std::to_string(s) + ".md",
                format_pressure(pr, cfg.hot_threshold, cfg.pressure_threshold));

    std::cerr << "[acceptance] cloud K-sweep seed " << s << "\n";
    const auto sweep = run_sweep(cfg, &t);
    for (const SweepRow& row : sweep) r.sweep_risk[row.k] = row.result.risk;
    r.sweep_table = format_sweep(sweep, Domain::Cloud);
    write_table("cloud_sweep_seed" + std::to_string(s) + ".md", r.sweep_table);

    cloud_runs.push_back(r);
    if (!cloud_first) cloud_first = std::move(t);
  }

  std::vector<AirlineSeed> airline_runs;
  std::optional<Table1> airline_first;
  for (std::uint64_t s = first_seed; s < first_seed + seeds; ++s) {
    std::cerr << "[acceptance] airline seed " << s << "\n";
    Table1 t = run_table1(domain_config(Domain::Airline, s));
    AirlineSeed r;
    r.seed = s;
    r.proto_cost = t.row("ProtoHAIL").risk;
    r.bc_cost = t.row("BC").risk;
    r.proto_profit = t.row("ProtoHAIL").benefit;
    r.ma_profit = t.row("Moving Average").benefit;
    r.queries = t.protohail.queries;
    r.seconds = t.seconds;
    write_table("airline_table1_seed" + std::to_string(s) + ".md", format_table1(t));
    airline_runs.push_back(r);
    if (!airline_first) airline_first = std::move(t);
  }

  verdicts.push_back(cloud_table(cloud_runs));
  print(verdicts.back());
  verdicts.push_back(airline_table(airline_runs));
  print(verdicts.back());
  verdicts.push_back(k_sweep(cloud_runs, selected_k));
  print(verdicts.back());
  verdicts.push_back(pressure(cloud_runs, cloud_defaults.pressure_threshold));
  print(verdicts.back());
  run("determinism", [&] { return determinism(*airline_first, *cloud_first); });

  std::size_t passed = 0;
  for (const Verdict& v : verdicts) passed += v.pass;
  std::cout << "\n" << passed << "/" << verdicts.size() << " criteria passed\n";
  return passed == verdicts.size() ? 0 : 1;
}
