#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protohail/config.hpp"
#include "protohail/encoder.hpp"
#include "protohail/sim_airline.hpp"
#include "protohail/sim_cloud.hpp"

namespace protohail {

/// A generated simulator instance together with its expert trajectories.
struct DomainData {
  Domain domain = Domain::Cloud;
  std::optional<cloud::Fleet> fleet;
  std::optional<airline::History> history;
  std::vector<Trajectory> trajectories;  // one per service or airline, entity order
};

DomainData generate_domain(const ExperimentConfig& cfg);

struct DataSplit {
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
};

/// Shuffles entity ids with `seed` and puts the first round(fraction * n) of
/// them in the training set. Both halves keep their original relative order.
/// At least one entity always lands in the training set.
DataSplit split_by_entity(std::span<const Trajectory> data, double train_fraction, std::uint64_t seed);

/// One JSON object per labeled or unlabeled step:
/// {"entity_id": ..., "t": ..., "state": [...], "action": ... | null, "domain_tag": ...}.
void write_jsonl(std::ostream& out, std::span<const Trajectory> data);
/// Groups records by entity_id in first-seen order. Throws ConfigError on a
/// malformed line, a gap in t, or a mixed domain tag.
std::vector<Trajectory> read_jsonl(std::istream& in);

void save_dataset(const std::string& path, std::span<const Trajectory> data);
std::vector<Trajectory> load_dataset(const std::string& path);

}  // namespace protohail
