#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "protohail/baselines.hpp"
#include "protohail/hitl.hpp"
#include "protohail/numerics.hpp"
#include "protohail/policy.hpp"

namespace protohail {

inline constexpr int kCheckpointFormatVersion = 1;

/// Everything needed to resume a run or replay its policy. A checkpoint holds
/// either a prototype model (`kind == "protohail"`) or a plain BC model
/// (`kind == "bc"`).
struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  std::string kind = "protohail";
  std::string config_text;
  std::uint64_t config_hash = 0;

  std::optional<PolicyModel> model;
  std::optional<BcModel> bc;

  FeedbackLedger ledger;
  ShadowSchedule shadow;
  std::optional<OptimizerState> optimizer;
  std::uint64_t iteration = 0;
  std::size_t queries = 0;
  /// std::mt19937_64 state in its standard textual form.
  std::string rng_state;
  /// Set when the run aborted; names the failing primitive.
  std::string diagnostic;
};

nlohmann::json to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Checkpoint& c);
/// Throws ConfigError on a missing field, a shape mismatch or an unknown
/// format version.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace protohail
