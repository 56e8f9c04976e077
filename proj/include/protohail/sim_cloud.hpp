#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protohail/encoder.hpp"

namespace protohail {

/// Rates or other per-step values, indexed [entity][step].
using RateMatrix = std::vector<std::vector<double>>;

}  // namespace protohail

namespace protohail::cloud {

enum class Pattern { Diurnal, Evening, Flat };
std::string to_string(Pattern p);

struct FleetConfig {
  std::size_t services = 30;
  std::size_t hours = 336;
  /// Extra history generated before the first hour so lagged features exist.
  std::size_t warmup_hours = 168;
  std::size_t min_vms = 2;
  std::size_t max_vms = 8;
  int node_cores = 64;
  double node_memory_gb = 256.0;
  /// Requested memory per requested core, drawn per service.
  double memory_per_core_min_gb = 1.0;
  double memory_per_core_max_gb = 2.0;
  /// Node count is this multiple of the requested cores, in whole nodes.
  double node_headroom = 1.3;
  /// Usage traces never exceed this fraction of requested cores.
  double usage_cap = 0.85;
  double expert_floor = 0.1;
  std::size_t expert_window = 24;
};

struct Vm {
  std::size_t id = 0;
  std::size_t service = 0;
  int cores = 0;  // requested vCPUs q
  double memory_gb = 0.0;
  /// Hourly peak usage as a fraction of q; warmup_hours + hours entries.
  std::vector<double> usage;
};

struct Service {
  std::size_t id = 0;
  Pattern pattern = Pattern::Flat;
  std::vector<std::size_t> vms;
  int cores_per_vm = 0;
  double memory_per_vm_gb = 0.0;
  double base = 0.0;
  double amplitude = 0.0;
  double noise = 0.0;
  /// Max over the service's VMs of their hourly usage; same length as Vm::usage.
  std::vector<double> peak;
};

struct Node {
  int cores = 0;
  double memory_gb = 0.0;
};

struct Fleet {
  FleetConfig config;
  std::uint64_t seed = 0;
  std::vector<Service> services;
  std::vector<Vm> vms;
  std::vector<Node> nodes;

  std::size_t hours() const noexcept { return config.hours; }
  std::size_t warmup() const noexcept { return config.warmup_hours; }
  int total_cores() const noexcept;
  int requested_cores() const noexcept;
};

/// Deterministic per seed. Pattern mix is 40% diurnal, 30% evening, 30% flat
/// (rounded, shuffled). The node count is raised until a non-oversubscribed
/// allocation places every VM.
Fleet generate_fleet(std::uint64_t seed, const FleetConfig& config);

/// ceil(a * q), at least one core.
int allocated_cores(double a, int q);

struct VmRequest {
  int cores = 0;
  double memory_gb = 0.0;
};

struct Placement {
  std::vector<std::optional<std::size_t>> node_of;  // per VM
  std::vector<int> used_cores;                      // per node
  std::vector<double> used_memory_gb;               // per node
  std::vector<std::size_t> unplaced;
};

/// Places VMs in request order, each on the feasible node with the fewest
/// cores left after placement (lowest index on ties).
Placement allocate_best_fit(std::span<const VmRequest> vms, std::span<const Node> nodes);

struct HourOutcome {
  int hot_nodes = 0;
  int remain_cores = 0;
};

/// Node usage is sum(usage * q) over hosted VMs, independent of the
/// allocation; a node is hot when usage exceeds threshold * capacity.
HourOutcome evaluate_hour(const Placement& placement, std::span<const Node> nodes,
                          std::span<const double> vm_usage, std::span<const int> vm_cores,
                          double hot_threshold);

struct CloudOutcome {
  double hot_node_rate = 0.0;  // hot node-hours / node-hours
  long remain_cores = 0;       // floor of the hourly mean
  std::vector<int> hot_nodes;  // per hour
  std::vector<int> remain;     // per hour
  std::vector<double> reward;  // -h_t + m_t
  std::vector<double> normalized_reward;  // -h_t/nodes + m_t/capacity
  std::size_t unplaced_vm_hours = 0;
};

/// Re-packs the fleet every hour with the given per-service rates
/// (services x hours, applied to every VM of the service).
CloudOutcome evaluate(const Fleet& fleet, const RateMatrix& rates, double hot_threshold = 0.85);

/// Trailing max over the last `window` values up to and including each
/// hour, clamped to [floor, 1].
std::vector<double> expert_rates(std::span<const double> usage, std::size_t window = 24,
                                 double floor = 0.1);

inline constexpr std::size_t kStateWidth = 10;
/// State features at evaluation hour t (history strictly before t, plus
/// calendar and shape features).
std::vector<double> state_features(const Fleet& fleet, std::size_t service, std::size_t t);

/// One trajectory per service over the evaluation hours, labeled with the
/// expert rate.
std::vector<Trajectory> expert_trajectories(const Fleet& fleet);

/// Usage at evaluation hour t for the moving-average baseline's history
/// (index 0 of the state vector is the previous hour's usage).
inline constexpr std::size_t kPreviousUsageFeature = 0;

}  // namespace protohail::cloud
