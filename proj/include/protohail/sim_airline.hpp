#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "protohail/encoder.hpp"
#include "protohail/sim_cloud.hpp"

namespace protohail::airline {

struct AirlineConfig {
  std::size_t airlines = 32;
  std::size_t years = 24;
  int first_year = 1998;
  /// A rate a in [0,1] sells up to (1 + a * max_margin) * seats tickets.
  double max_margin = 0.10;
  double compensation_unit = 800.0;
  double fare_unit = 200.0;
  /// Use expected shows instead of binomial draws.
  bool deterministic = false;
};

struct Quarter {
  std::size_t airline = 0;
  int year = 0;
  int quarter = 1;  // 1..4
  long seats = 0;
  long demand = 0;
  double no_show_rate = 0.0;
  /// The airline's own overbooking rate for the quarter (3%..5%).
  double expert_rate = 0.0;
};

struct History {
  AirlineConfig config;
  std::uint64_t seed = 0;
  /// [airline][quarter]; the first four quarters are a warm-up year that
  /// only feeds lagged features.
  std::vector<std::vector<Quarter>> airlines;

  std::size_t quarters() const noexcept { return config.years * 4; }
};

inline constexpr std::size_t kWarmupQuarters = 4;

History generate_history(std::uint64_t seed, const AirlineConfig& config);

struct Outcome {
  long sold = 0;
  double shows = 0.0;
  double no_shows = 0.0;
  double offloaded = 0.0;
  double onboard = 0.0;
  double cost = 0.0;
  double profit = 0.0;
  double reward() const noexcept { return -cost + profit; }
};

/// With `rng == nullptr` (or config.deterministic) shows take their expected
/// value; otherwise they are Binomial(sold, 1 - no_show_rate).
Outcome overbook_outcome(double a, const Quarter& q, const AirlineConfig& config, std::mt19937_64* rng);

/// a^E = expert_rate / max_margin, per airline per evaluation quarter.
RateMatrix expert_rates(const History& history);

inline constexpr std::size_t kStateWidth = 9;
/// Index of the previous quarter's no-show rate in the state vector.
inline constexpr std::size_t kPreviousNoShowFeature = 4;
/// Index of the previous quarter's recorded overbooking rate.
inline constexpr std::size_t kPreviousRateFeature = 8;
std::vector<double> state_features(const History& history, std::size_t airline, std::size_t t);
std::vector<Trajectory> expert_trajectories(const History& history);

struct AirlineReport {
  double cost = 0.0;
  double profit = 0.0;
  double offloaded = 0.0;
  std::vector<double> reward;  // per evaluation quarter, summed over airlines
};

/// Shows are drawn from a generator seeded by (seed, airline, quarter), so
/// every policy faces the same randomness.
AirlineReport evaluate(const History& history, const RateMatrix& rates, std::uint64_t seed);

}  // namespace protohail::airline
