#include "protohail/sim_airline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "protohail/tensor.hpp"

namespace protohail::airline {

History generate_history(std::uint64_t seed, const AirlineConfig& config) {
  if (config.years < 1) throw ContractViolation("generate_history: years must be >= 1");
  if (config.airlines < 1) throw ContractViolation("generate_history: at least one airline");
  if (!(config.max_margin > 0.0)) throw ContractViolation("generate_history: max_margin must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  // Final-year rate is a quarter of the first-year rate.
  const double lambda = config.years > 1 ? std::log(4.0) / static_cast<double>(config.years - 1) : 0.0;
  History h;
  h.config = config;
  h.seed = seed;
  for (std::size_t a = 0; a < config.airlines; ++a) {
    const double seats0 = uniform(5000.0, 50000.0);
    const double growth = uniform(0.0, 0.03);
    const double r0 = uniform(0.05, 0.12);
    const double season[4] = {1.0, uniform(1.2, 1.4), uniform(1.2, 1.4), 1.05};
    const double base_rate = uniform(0.03, 0.05);
    std::vector<Quarter> rows;
    for (std::size_t i = 0; i < (config.years + 1) * 4; ++i) {
      const double year_index = static_cast<double>(i / 4) - 1.0;  // warm-up year is -1
      Quarter q;
      q.airline = a;
      q.year = config.first_year + static_cast<int>(year_index);
      q.quarter = static_cast<int>(i % 4) + 1;
      const double seats = seats0 * std::pow(1.0 + growth, year_index) * (1.0 + 0.02 * gauss(rng));
      q.seats = std::max(100L, std::lround(seats));
      q.demand = std::max(1L, std::lround(q.seats * season[i % 4] * uniform(0.95, 1.1)));
      q.no_show_rate = std::clamp(r0 * std::exp(-lambda * year_index) * (1.0 + 0.05 * gauss(rng)), 0.001, 0.5);
      q.expert_rate = std::clamp(base_rate + uniform(-0.005, 0.005), 0.03, 0.05);
      rows.push_back(q);
    }
    h.airlines.push_back(std::move(rows));
  }
  return h;
}

Outcome overbook_outcome(double a, const Quarter& q, const AirlineConfig& config, std::mt19937_64* rng) {
  if (!(a >= 0.0 && a <= 1.0)) throw ContractViolation("rate " + std::to_string(a) + " outside [0,1]");
  Outcome o;
  const auto cap = static_cast<long>(std::floor((1.0 + a * config.max_margin) * static_cast<double>(q.seats)));
  o.sold = std::min(q.demand, cap);
  if (rng == nullptr || config.deterministic) {
    o.shows = static_cast<double>(o.sold) * (1.0 - q.no_show_rate);
  } else {
    std::binomial_distribution<long> shows(o.sold, 1.0 - q.no_show_rate);
    o.shows = static_cast<double>(shows(*rng));
  }
  const auto seats = static_cast<double>(q.seats);
  o.no_shows = static_cast<double>(o.sold) - o.shows;
  o.offloaded = std::max(0.0, o.shows - seats);
  o.onboard = o.shows - o.offloaded;
  o.cost = o.offloaded * config.compensation_unit;
  // Tickets sold beyond capacity earn the fare only when the holder flew.
  const double beyond = std::max(0.0, static_cast<double>(o.sold) - seats);
  o.profit = std::max(0.0, beyond - o.offloaded) * config.fare_unit;
  return o;
}

RateMatrix expert_rates(const History& history) {
  RateMatrix out;
  for (const auto& rows : history.airlines) {
    std::vector<double> r;
    for (std::size_t t = 0; t < history.quarters(); ++t)
      r.push_back(std::min(1.0, rows[kWarmupQuarters + t].expert_rate / history.config.max_margin));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<double> state_features(const History& history, std::size_t airline, std::size_t t) {
  const auto& rows = history.airlines.at(airline);
  const std::size_t abs = kWarmupQuarters + t;
  const Quarter& q = rows.at(abs);
  const double angle = 2.0 * std::numbers::pi * (q.quarter - 1) / 4.0;
  const double span = history.config.years > 1 ? static_cast<double>(history.config.years - 1) : 1.0;
  double ns_mean = 0.0;
  for (std::size_t k = 1; k <= 4; ++k) ns_mean += rows[abs - k].no_show_rate;
  auto load = [&](std::size_t i) { return static_cast<double>(rows[i].demand) / static_cast<double>(rows[i].seats); };
  return {std::sin(angle),
          std::cos(angle),
          static_cast<double>(t / 4) / span,
          static_cast<double>(q.seats) / 1000.0,
          rows[abs - 1].no_show_rate,
          ns_mean / 4.0,
          load(abs - 1),
          load(abs - 4),
          rows[abs - 1].expert_rate};
}

std::vector<Trajectory> expert_trajectories(const History& history) {
  const RateMatrix a = expert_rates(history);
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < history.airlines.size(); ++i) {
    Trajectory tr;
    tr.entity_id = "airline-" + std::to_string(i);
    tr.domain = Domain::Airline;
    for (std::size_t t = 0; t < history.quarters(); ++t) tr.steps.push_back({state_features(history, i, t), a[i][t]});
    out.push_back(std::move(tr));
  }
  return out;
}

AirlineReport evaluate(const History& history, const RateMatrix& rates, std::uint64_t seed) {
  if (rates.size() != history.airlines.size()) throw ContractViolation("evaluate: one rate row per airline");
  AirlineReport rep;
  rep.reward.assign(history.quarters(), 0.0);
  for (std::size_t i = 0; i < history.airlines.size(); ++i) {
    if (rates[i].size() != history.quarters()) throw ContractViolation("evaluate: one rate per quarter");
    for (std::size_t t = 0; t < history.quarters(); ++t) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(t)};
      std::mt19937_64 rng(seq);
      const Outcome o = overbook_outcome(rates[i][t], history.airlines[i][kWarmupQuarters + t], history.config, &rng);
      rep.cost += o.cost;
      rep.profit += o.profit;
      rep.offloaded += o.offloaded;
      rep.reward[t] += o.reward();
    }
  }
  return rep;
}

}  // namespace protohail::airline
