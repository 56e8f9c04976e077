#include "protohail/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <numeric>

#include "protohail/kvconfig.hpp"

namespace protohail {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string risk_label(Domain d) { return d == Domain::Cloud ? "hot node rate (%)" : "compensation cost"; }
std::string benefit_label(Domain d) { return d == Domain::Cloud ? "remain cores" : "profit"; }

std::string risk_text(Domain d, double v) { return d == Domain::Cloud ? fixed(100.0 * v, 2) : fixed(v, 0); }
std::string benefit_text(double v) { return fixed(v, 0); }

}  // namespace

MethodResult score(const DomainData& data, const RateMatrix& rates, const ExperimentConfig& cfg,
                   const std::string& method, std::optional<double> hot_threshold) {
  MethodResult r;
  r.method = method;
  r.rates = rates;
  if (data.domain == Domain::Cloud) {
    const cloud::CloudOutcome o = cloud::evaluate(*data.fleet, rates, hot_threshold.value_or(cfg.hot_threshold));
    r.risk = o.hot_node_rate;
    r.benefit = static_cast<double>(o.remain_cores);
    r.reward_series = o.reward;
  } else {
    const airline::AirlineReport o = airline::evaluate(*data.history, rates, cfg.seed);
    r.risk = o.cost;
    r.benefit = o.profit;
    r.reward_series = o.reward;
  }
  r.reward = std::accumulate(r.reward_series.begin(), r.reward_series.end(), 0.0);
  return r;
}

MethodResult evaluate_controller(const DomainData& data, Controller& controller, const ExperimentConfig& cfg) {
  return score(data, rollout(controller, data.trajectories), cfg, controller.name());
}

GridResult run_grid_search(const DomainData& data, const ExperimentConfig& cfg) {
  const std::size_t entities = data.trajectories.size();
  const std::size_t steps = data.trajectories.front().length();
  const auto grid = default_rate_grid(cfg.grid_points);
  return grid_search(grid, [&](double rate) {
    const RateMatrix rates(entities, std::vector<double>(steps, rate));
    const MethodResult r = score(data, rates, cfg, "grid");
    return GridPoint{rate, r.risk, r.benefit};
  });
}

MovingAverageController make_moving_average(const ExperimentConfig& cfg) {
  if (cfg.domain == Domain::Cloud) {
    return MovingAverageController(cfg.window(), cloud::kPreviousUsageFeature, 1.0);
  }
  return MovingAverageController(cfg.window(), airline::kPreviousRateFeature, 1.0 / cfg.airline.max_margin);
}

OracleRules load_oracle_rules(const ExperimentConfig& cfg) {
  if (cfg.hitl.oracle_rules.empty()) return OracleRules{};
  return parse_oracle_rules(read_text_file(cfg.hitl.oracle_rules));
}

ProtoRun train_protohail(const ExperimentConfig& cfg, const std::vector<Trajectory>& train) {
  std::optional<OracleChannel> oracle;
  if (cfg.hitl.enabled && cfg.hitl.source == FeedbackSource::Oracle) oracle.emplace(load_oracle_rules(cfg));
  Trainer trainer(cfg, train, oracle ? &*oracle : nullptr);
  trainer.run();
  ProtoRun out;
  out.model = trainer.model();
  out.log = trainer.log();
  out.queries = trainer.query_count();
  out.edits = trainer.edit_count();
  out.iterations = trainer.iteration();
  out.ledger = trainer.ledger();
  out.checkpoint = trainer.checkpoint();
  return out;
}

BcModel train_bc(const ExperimentConfig& cfg, const std::vector<Trajectory>& train) {
  FitOptions opts;
  opts.epochs = cfg.epochs;
  opts.learning_rate = cfg.learning_rate;
  opts.batch_size = cfg.batch_size;
  opts.seed = cfg.seed;
  return train_plain_bc(train, cfg.hidden, cfg.bc_width, cfg.imitation, opts);
}

const MethodResult& Table1::row(const std::string& method) const {
  for (const MethodResult& r : rows)
    if (r.method == method) return r;
  throw ContractViolation("no table row for " + method);
}

Table1 run_table1(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  Table1 t;
  t.seed = cfg.seed;
  t.data = generate_domain(cfg);
  const DataSplit split = split_by_entity(t.data.trajectories, cfg.train_fraction, cfg.seed);

  t.protohail = train_protohail(cfg, split.train);
  PrototypeController proto(t.protohail.model);
  t.rows.push_back(evaluate_controller(t.data, proto, cfg));

  t.bc = train_bc(cfg, split.train);
  BcController bc(t.bc);
  t.rows.push_back(evaluate_controller(t.data, bc, cfg));

  t.grid = run_grid_search(t.data, cfg);
  ConstantController grid(t.grid.best.rate);
  t.rows.push_back(evaluate_controller(t.data, grid, cfg));

  MovingAverageController ma = make_moving_average(cfg);
  t.rows.push_back(evaluate_controller(t.data, ma, cfg));

  t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return t;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const Table1* known) {
  if (known && (known->seed != cfg.seed || known->data.domain != cfg.domain))
    throw ConfigError("the reused Table 1 run belongs to a different seed or domain");
  const DomainData data = generate_domain(cfg);
  const DataSplit split = split_by_entity(data.trajectories, cfg.train_fraction, cfg.seed);
  std::vector<SweepRow> rows;
  for (std::size_t k : cfg.sweep_k) {
    if (known && k == cfg.prototypes()) {
      SweepRow row;
      row.k = k;
      row.result = known->row("ProtoHAIL");
      row.queries = known->protohail.queries;
      row.final_k = known->protohail.model.protos.count();
      rows.push_back(std::move(row));
      continue;
    }
    ExperimentConfig c = cfg;
    c.k = k;
    const ProtoRun run = train_protohail(c, split.train);
    PrototypeController ctl(run.model);
    SweepRow row;
    row.k = k;
    row.result = evaluate_controller(data, ctl, c);
    row.queries = run.queries;
    row.final_k = run.model.protos.count();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<PressureRow> run_pressure(const Table1& t, const ExperimentConfig& cfg) {
  if (t.data.domain != Domain::Cloud) throw ConfigError("the pressure test applies to the cloud domain");
  std::vector<PressureRow> out;
  for (const char* method : {"ProtoHAIL", "BC"}) {
    const MethodResult& r = t.row(method);
    PressureRow p;
    p.method = method;
    p.hot_rate_standard = score(t.data, r.rates, cfg, method, cfg.hot_threshold).risk;
    p.hot_rate_pressure = score(t.data, r.rates, cfg, method, cfg.pressure_threshold).risk;
    out.push_back(p);
  }
  return out;
}

std::string format_table1(const Table1& t) {
  const Domain d = t.data.domain;
  std::string s = "| " + pad("method", 16) + " | " + pad(risk_label(d), 18) + " | " + pad(benefit_label(d), 14) +
                  " |\n|" + std::string(18, '-') + "|" + std::string(20, '-') + "|" + std::string(16, '-') + "|\n";
  for (const MethodResult& r : t.rows) {
    s += "| " + pad(r.method, 16) + " | " + pad(risk_text(d, r.risk), 18) + " | " +
         pad(benefit_text(r.benefit), 14) + " |\n";
  }
  return s;
}

std::string format_sweep(const std::vector<SweepRow>& rows, Domain d) {
  std::string s = "| K | " + pad(risk_label(d), 18) + " | " + pad(benefit_label(d), 14) + " | queries | final K |\n" +
                  "|---|" + std::string(20, '-') + "|" + std::string(16, '-') + "|---------|---------|\n";
  for (const SweepRow& r : rows) {
    s += "| " + std::to_string(r.k) + " | " + pad(risk_text(d, r.result.risk), 18) + " | " +
         pad(benefit_text(r.result.benefit), 14) + " | " + pad(std::to_string(r.queries), 7) + " | " +
         pad(std::to_string(r.final_k), 7) + " |\n";
  }
  return s;
}

std::string format_pressure(const std::vector<PressureRow>& rows, double standard, double pressure) {
  std::string s = "| method    | hot rate @" + fixed(standard, 2) + " (%) | hot rate @" + fixed(pressure, 2) +
                  " (%) |\n|-----------|--------------------|--------------------|\n";
  for (const PressureRow& r : rows) {
    s += "| " + pad(r.method, 9) + " | " + pad(fixed(100.0 * r.hot_rate_standard, 2), 18) + " | " +
         pad(fixed(100.0 * r.hot_rate_pressure, 2), 18) + " |\n";
  }
  return s;
}

}  // namespace protohail
