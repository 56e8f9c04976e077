#include "protohail/sim_cloud.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "protohail/tensor.hpp"

namespace protohail::cloud {

namespace {

constexpr int kCoreChoices[] = {2, 4, 8, 16};

bool is_weekday(std::size_t abs_hour) { return (abs_hour / 24) % 7 < 5; }

double pattern_level(Pattern p, double base, double amp, std::size_t abs_hour) {
  const std::size_t hod = abs_hour % 24;
  switch (p) {
    case Pattern::Diurnal: {
      double shape = 0.0;
      if (hod >= 9 && hod <= 17) shape = 1.0;
      else if (hod == 7 || hod == 8 || hod == 18 || hod == 19) shape = 0.5;
      if (!is_weekday(abs_hour)) shape *= 0.25;
      return base + amp * shape;
    }
    case Pattern::Evening: {
      double shape = 0.0;
      if (hod >= 19 && hod <= 23) shape = 1.0;
      else if (hod == 18 || hod == 0) shape = 0.5;
      return base + amp * shape;
    }
    case Pattern::Flat:
      return base;
  }
  return base;
}

}  // namespace

std::string to_string(Pattern p) {
  switch (p) {
    case Pattern::Diurnal: return "diurnal";
    case Pattern::Evening: return "evening";
    case Pattern::Flat: return "flat";
  }
  return "?";
}

int Fleet::total_cores() const noexcept {
  int s = 0;
  for (const Node& n : nodes) s += n.cores;
  return s;
}

int Fleet::requested_cores() const noexcept {
  int s = 0;
  for (const Vm& v : vms) s += v.cores;
  return s;
}

Fleet generate_fleet(std::uint64_t seed, const FleetConfig& config) {
  if (config.services == 0) throw ContractViolation("generate_fleet: at least one service");
  if (config.hours == 0) throw ContractViolation("generate_fleet: zero hours");
  if (config.min_vms == 0 || config.max_vms < config.min_vms) throw ContractViolation("generate_fleet: vm range");
  if (config.warmup_hours < std::max<std::size_t>(168, config.expert_window)) {
    throw ContractViolation("generate_fleet: warmup must cover a week of history");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const std::size_t s = config.services;
  const auto n_diurnal = static_cast<std::size_t>(std::lround(0.4 * static_cast<double>(s)));
  const auto n_evening = std::min(s - n_diurnal, static_cast<std::size_t>(std::lround(0.3 * static_cast<double>(s))));
  std::vector<Pattern> patterns;
  patterns.insert(patterns.end(), n_diurnal, Pattern::Diurnal);
  patterns.insert(patterns.end(), n_evening, Pattern::Evening);
  patterns.resize(s, Pattern::Flat);
  std::shuffle(patterns.begin(), patterns.end(), rng);

  Fleet fleet;
  fleet.config = config;
  fleet.seed = seed;
  const std::size_t total_hours = config.warmup_hours + config.hours;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t i = 0; i < s; ++i) {
    Service svc;
    svc.id = i;
    svc.pattern = patterns[i];
    switch (svc.pattern) {
      case Pattern::Diurnal:
        svc.base = uniform(0.08, 0.2);
        svc.amplitude = uniform(0.35, 0.6);
        svc.noise = 0.03;
        break;
      case Pattern::Evening:
        svc.base = uniform(0.1, 0.2);
        svc.amplitude = uniform(0.3, 0.55);
        svc.noise = 0.03;
        break;
      case Pattern::Flat:
        svc.base = uniform(0.3, 0.6);
        svc.amplitude = 0.0;
        svc.noise = 0.02;
        break;
    }
    svc.cores_per_vm = kCoreChoices[rng() % 4];
    svc.memory_per_vm_gb = svc.cores_per_vm * uniform(config.memory_per_core_min_gb, config.memory_per_core_max_gb);
    const std::size_t n_vms = config.min_vms + rng() % (config.max_vms - config.min_vms + 1);
    svc.peak.assign(total_hours, 0.0);
    for (std::size_t v = 0; v < n_vms; ++v) {
      Vm vm;
      vm.id = fleet.vms.size();
      vm.service = i;
      vm.cores = svc.cores_per_vm;
      vm.memory_gb = svc.memory_per_vm_gb;
      const double factor = uniform(0.85, 1.0);
      vm.usage.resize(total_hours);
      for (std::size_t h = 0; h < total_hours; ++h) {
        const double level = factor * pattern_level(svc.pattern, svc.base, svc.amplitude, h) + svc.noise * gauss(rng);
        vm.usage[h] = std::clamp(level, 0.0, config.usage_cap);
        svc.peak[h] = std::max(svc.peak[h], vm.usage[h]);
      }
      svc.vms.push_back(vm.id);
      fleet.vms.push_back(std::move(vm));
    }
    fleet.services.push_back(std::move(svc));
  }

  const double need = config.node_headroom * fleet.requested_cores() / config.node_cores;
  const auto n_nodes = static_cast<std::size_t>(std::ceil(need));
  fleet.nodes.assign(std::max<std::size_t>(1, n_nodes), Node{config.node_cores, config.node_memory_gb});
  std::vector<VmRequest> full;
  for (const Vm& v : fleet.vms) full.push_back({v.cores, v.memory_gb});
  while (!allocate_best_fit(full, fleet.nodes).unplaced.empty()) {
    fleet.nodes.push_back(Node{config.node_cores, config.node_memory_gb});
  }
  return fleet;
}

int allocated_cores(double a, int q) {
  if (!(a >= 0.0 && a <= 1.0)) throw ContractViolation("rate " + std::to_string(a) + " outside [0,1]");
  if (q < 1) throw ContractViolation("requested cores must be >= 1");
  return std::max(1, static_cast<int>(std::ceil(a * q)));
}

Placement allocate_best_fit(std::span<const VmRequest> vms, std::span<const Node> nodes) {
  Placement p;
  p.node_of.assign(vms.size(), std::nullopt);
  p.used_cores.assign(nodes.size(), 0);
  p.used_memory_gb.assign(nodes.size(), 0.0);
  for (std::size_t v = 0; v < vms.size(); ++v) {
    std::optional<std::size_t> best;
    int best_left = 0;
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      const int left = nodes[n].cores - p.used_cores[n] - vms[v].cores;
      if (left < 0 || p.used_memory_gb[n] + vms[v].memory_gb > nodes[n].memory_gb) continue;
      if (!best || left < best_left) {
        best = n;
        best_left = left;
      }
    }
    if (!best) {
      p.unplaced.push_back(v);
      continue;
    }
    p.node_of[v] = best;
    p.used_cores[*best] += vms[v].cores;
    p.used_memory_gb[*best] += vms[v].memory_gb;
  }
  return p;
}

HourOutcome evaluate_hour(const Placement& placement, std::span<const Node> nodes,
                          std::span<const double> vm_usage, std::span<const int> vm_cores,
                          double hot_threshold) {
  if (vm_usage.size() != placement.node_of.size() || vm_cores.size() != vm_usage.size()) {
    throw ContractViolation("evaluate_hour: VM count mismatch");
  }
  std::vector<double> load(nodes.size(), 0.0);
  for (std::size_t v = 0; v < vm_usage.size(); ++v)
    if (placement.node_of[v]) load[*placement.node_of[v]] += vm_usage[v] * vm_cores[v];
  HourOutcome out;
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    if (load[n] > hot_threshold * nodes[n].cores) ++out.hot_nodes;
    out.remain_cores += nodes[n].cores - placement.used_cores[n];
  }
  return out;
}

CloudOutcome evaluate(const Fleet& fleet, const RateMatrix& rates, double hot_threshold) {
  if (rates.size() != fleet.services.size()) throw ContractViolation("evaluate: one rate row per service");
  for (const auto& row : rates)
    if (row.size() != fleet.hours()) throw ContractViolation("evaluate: one rate per evaluation hour");
  CloudOutcome out;
  const int capacity = fleet.total_cores();
  std::vector<int> cores(fleet.vms.size());
  for (const Vm& v : fleet.vms) cores[v.id] = v.cores;
  std::vector<VmRequest> req(fleet.vms.size());
  std::vector<double> usage(fleet.vms.size());
  long hot_total = 0;
  double remain_sum = 0.0;
  for (std::size_t t = 0; t < fleet.hours(); ++t) {
    const std::size_t abs = fleet.warmup() + t;
    for (const Vm& v : fleet.vms) {
      req[v.id] = {allocated_cores(rates[v.service][t], v.cores), v.memory_gb};
      usage[v.id] = v.usage[abs];
    }
    const Placement p = allocate_best_fit(req, fleet.nodes);
    const HourOutcome h = evaluate_hour(p, fleet.nodes, usage, cores, hot_threshold);
    out.unplaced_vm_hours += p.unplaced.size();
    out.hot_nodes.push_back(h.hot_nodes);
    out.remain.push_back(h.remain_cores);
    out.reward.push_back(-h.hot_nodes + static_cast<double>(h.remain_cores));
    out.normalized_reward.push_back(-static_cast<double>(h.hot_nodes) / static_cast<double>(fleet.nodes.size()) +
                                    static_cast<double>(h.remain_cores) / capacity);
    hot_total += h.hot_nodes;
    remain_sum += h.remain_cores;
  }
  out.hot_node_rate = static_cast<double>(hot_total) / static_cast<double>(fleet.nodes.size() * fleet.hours());
  out.remain_cores = static_cast<long>(std::floor(remain_sum / static_cast<double>(fleet.hours())));
  return out;
}

std::vector<double> expert_rates(std::span<const double> usage, std::size_t window, double floor) {
  if (window == 0) throw ContractViolation("expert_rates: window must be >= 1");
  std::vector<double> out(usage.size());
  for (std::size_t t = 0; t < usage.size(); ++t) {
    const std::size_t lo = t + 1 >= window ? t + 1 - window : 0;
    const double mx = *std::max_element(usage.begin() + static_cast<std::ptrdiff_t>(lo),
                                        usage.begin() + static_cast<std::ptrdiff_t>(t) + 1);
    out[t] = std::clamp(mx, floor, 1.0);
  }
  return out;
}

std::vector<double> state_features(const Fleet& fleet, std::size_t service, std::size_t t) {
  const Service& svc = fleet.services.at(service);
  const std::size_t abs = fleet.warmup() + t;
  const auto& u = svc.peak;
  double mx = 0.0, sum = 0.0;
  for (std::size_t k = 1; k <= 24; ++k) {
    mx = std::max(mx, u[abs - k]);
    sum += u[abs - k];
  }
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(abs % 24) / 24.0;
  return {u[abs - 1],
          mx,
          sum / 24.0,
          u[abs - 24],
          u[abs - 168],
          std::sin(angle),
          std::cos(angle),
          is_weekday(abs) ? 1.0 : 0.0,
          static_cast<double>(svc.cores_per_vm),
          static_cast<double>(svc.vms.size())};
}

std::vector<Trajectory> expert_trajectories(const Fleet& fleet) {
  std::vector<Trajectory> out;
  for (const Service& svc : fleet.services) {
    const auto a = expert_rates(svc.peak, fleet.config.expert_window, fleet.config.expert_floor);
    Trajectory tr;
    tr.entity_id = "svc-" + std::to_string(svc.id);
    tr.domain = Domain::Cloud;
    for (std::size_t t = 0; t < fleet.hours(); ++t)
      tr.steps.push_back({state_features(fleet, svc.id, t), a[fleet.warmup() + t]});
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace protohail::cloud
