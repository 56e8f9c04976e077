#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protohail/encoder.hpp"
#include "protohail/hitl.hpp"
#include "protohail/kvconfig.hpp"
#include "protohail/policy.hpp"
#include "protohail/sim_airline.hpp"
#include "protohail/sim_cloud.hpp"

namespace protohail {

enum class FeedbackSource { Interactive, Oracle, None };
std::string to_string(FeedbackSource s);

struct HitlSettings {
  bool enabled = true;
  std::size_t frequency = 10;
  double u_p = 0.55;
  double u_a = 0.55;
  std::size_t top_n = 5;
  std::size_t shadow = kShadowIterations;
  double merge_percentile = 0.10;
  std::size_t max_action_queries = 5;
  FeedbackSource source = FeedbackSource::Oracle;
  /// Key-value rule table for the scripted oracle; empty means defaults.
  std::string oracle_rules;
  /// How long `serve` waits for an answer after posing a query.
  int query_wait_ms = 2000;
};

struct ExperimentConfig {
  Domain domain = Domain::Cloud;
  std::uint64_t seed = 0;
  /// 0 picks the domain default (3 for cloud, 4 for airline).
  std::size_t k = 0;
  LossWeights weights;
  double learning_rate = 1e-2;
  std::size_t hidden = 64;
  std::size_t batch_size = 128;
  std::size_t epochs = 300;
  ImitationLoss imitation = ImitationLoss::CrossEntropy;
  HitlSettings hitl;
  cloud::FleetConfig fleet;
  double hot_threshold = 0.85;
  double pressure_threshold = 0.30;
  airline::AirlineConfig airline;
  double train_fraction = 0.8;
  std::size_t bc_width = 64;
  /// 0 picks the domain default (24 hours, 4 quarters).
  std::size_t ma_window = 0;
  std::size_t grid_points = 21;
  std::vector<std::size_t> sweep_k{2, 3, 4, 5, 6};
  std::string output_dir = "runs";
  std::string bind_host = "127.0.0.1";
  int port = 8080;

  std::size_t prototypes() const noexcept { return k ? k : (domain == Domain::Cloud ? 3 : 4); }
  std::size_t window() const noexcept { return ma_window ? ma_window : (domain == Domain::Cloud ? 24 : 4); }
  RiskSide risk_side() const noexcept {
    return domain == Domain::Cloud ? RiskSide::BelowExpert : RiskSide::AboveExpert;
  }
  QueryConfig query_config() const;
  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Every settable key, in canonical order.
const std::vector<std::string>& config_keys();
/// Sets one key from text; throws ConfigError for an unknown key or bad value.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_setting(const ExperimentConfig& cfg, const std::string& key);
/// Applies `key = value` lines on top of `base`, then validates.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
/// Canonical `key = value` text: one line per key, doubles in round-trip form.
std::string format_config(const ExperimentConfig& cfg);
/// FNV-1a over format_config().
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hex(std::uint64_t v);

}  // namespace protohail
