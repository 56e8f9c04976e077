#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "protohail/baselines.hpp"
#include "protohail/config.hpp"
#include "protohail/dataset.hpp"
#include "protohail/trainer.hpp"

namespace protohail {

/// One row of a results table. Risk is the hot-node rate (cloud) or the
/// compensation cost (airline); benefit is remain cores or profit.
struct MethodResult {
  std::string method;
  double risk = 0.0;
  double benefit = 0.0;
  double reward = 0.0;  // summed over evaluation steps
  std::vector<double> reward_series;
  RateMatrix rates;
};

/// Scores a rate matrix (indexed [entity][step] over every entity of `data`).
MethodResult score(const DomainData& data, const RateMatrix& rates, const ExperimentConfig& cfg,
                   const std::string& method, std::optional<double> hot_threshold = std::nullopt);

/// Closed-loop rollout of `controller` over every entity, then score().
MethodResult evaluate_controller(const DomainData& data, Controller& controller, const ExperimentConfig& cfg);

/// Constant-rate grid search over every entity.
GridResult run_grid_search(const DomainData& data, const ExperimentConfig& cfg);

/// A moving-average controller reading the domain's natural feature.
MovingAverageController make_moving_average(const ExperimentConfig& cfg);

struct ProtoRun {
  PolicyModel model;
  std::vector<IterationLog> log;
  std::size_t queries = 0;
  std::size_t edits = 0;
  std::size_t iterations = 0;
  FeedbackLedger ledger;
  Checkpoint checkpoint;
};

/// Trains the prototype policy on `train`, answering queries with the
/// scripted oracle when the config asks for oracle feedback.
ProtoRun train_protohail(const ExperimentConfig& cfg, const std::vector<Trajectory>& train);
BcModel train_bc(const ExperimentConfig& cfg, const std::vector<Trajectory>& train);

/// The oracle rule table named by the config, or the defaults.
OracleRules load_oracle_rules(const ExperimentConfig& cfg);

struct Table1 {
  std::uint64_t seed = 0;
  DomainData data;
  std::vector<MethodResult> rows;  // ProtoHAIL, BC, Grid-search, Moving Average
  ProtoRun protohail;
  BcModel bc;
  GridResult grid;
  double seconds = 0.0;

  const MethodResult& row(const std::string& method) const;
};

/// Generates the domain for cfg.seed, trains on the seeded 80% split and
/// evaluates every method over all entities.
Table1 run_table1(const ExperimentConfig& cfg);

struct SweepRow {
  std::size_t k = 0;
  MethodResult result;
  std::size_t queries = 0;
  std::size_t final_k = 0;
};

/// Trains and evaluates ProtoHAIL once per K with identical seeds. When
/// `known` is a Table 1 run of the same config, its ProtoHAIL row stands in
/// for the default K instead of training that model again.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const Table1* known = nullptr);

struct PressureRow {
  std::string method;
  double hot_rate_standard = 0.0;
  double hot_rate_pressure = 0.0;
};

/// Re-scores the ProtoHAIL and BC policies of `t` under cfg.pressure_threshold.
std::vector<PressureRow> run_pressure(const Table1& t, const ExperimentConfig& cfg);

std::string format_table1(const Table1& t);
std::string format_sweep(const std::vector<SweepRow>& rows, Domain domain);
std::string format_pressure(const std::vector<PressureRow>& rows, double standard, double pressure);

}  // namespace protohail
