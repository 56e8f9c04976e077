#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "protohail/checkpoint.hpp"
#include "protohail/config.hpp"
#include "protohail/hitl.hpp"
#include "protohail/numerics.hpp"
#include "protohail/policy.hpp"

namespace protohail {

struct PrototypeStats {
  std::size_t id = 0;
  double mu = 0.0;
  std::size_t members = 0;
  double mean_dist = 0.0;
  int votes = 0;
  std::string explanation_id;
  /// Expert actions of the explanation trajectory, at most kSnapshotSeriesPoints long.
  std::vector<double> series;
};

inline constexpr std::size_t kSnapshotSeriesPoints = 336;

/// Immutable view of the trainer published at an iteration boundary.
struct TrainingSnapshot {
  std::uint64_t iteration = 0;
  LossBreakdown losses;
  std::size_t k = 0;
  std::vector<PrototypeStats> prototypes;
  /// The query awaiting an answer, or an empty set.
  QuerySet queries;
  bool final = false;
};

/// Where feedback comes from. Called only at iteration boundaries, from the
/// training thread.
class FeedbackChannel {
 public:
  virtual ~FeedbackChannel() = default;
  /// Every boundary's snapshot, in iteration order.
  virtual void publish(const TrainingSnapshot&) {}
  /// Whether publish() should see a fresh snapshot at every boundary rather
  /// than only where a query is posed.
  virtual bool wants_snapshots() const { return false; }
  /// Events to apply now. `posed` is the query published at this boundary,
  /// or null when no query was posed.
  virtual std::vector<FeedbackEvent> collect(const QuerySet* posed, const TrainingSnapshot& snapshot,
                                             const PolicyModel& model) = 0;
};

/// Answers each posed query with a ScriptedOracle; silent otherwise.
class OracleChannel final : public FeedbackChannel {
 public:
  /// A resumed run must continue past the checkpoint ledger's last sequence number.
  explicit OracleChannel(OracleRules rules, std::uint64_t first_seq = 1) : oracle_(rules, first_seq) {}
  std::vector<FeedbackEvent> collect(const QuerySet* posed, const TrainingSnapshot& snapshot,
                                     const PolicyModel& model) override;

 private:
  ScriptedOracle oracle_;
};

struct IterationLog {
  std::uint64_t iteration = 0;
  LossBreakdown losses;  // mean over the iteration's batches
  std::size_t k = 0;
  bool queried = false;
  std::size_t query_prototypes = 0;
  std::size_t query_actions = 0;
  std::size_t query_merges = 0;
  std::size_t events_applied = 0;
  std::size_t events_rejected = 0;
  bool shadow = false;
};

/// Why an event cannot be applied to the current model, or nullopt.
std::optional<std::string> event_problem(const FeedbackEvent& e, const PolicyModel& model,
                                         std::span<const Trajectory> data);

/// Single-threaded training loop for the prototype policy.
///
/// An iteration is one pass over shuffled batches of the training
/// trajectories. Boundaries fall before every iteration and after the last
/// one; they are the only place the ledger or the model structure changes.
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, std::vector<Trajectory> train, FeedbackChannel* channel = nullptr);
  /// Resumes from a checkpoint taken at an iteration boundary.
  Trainer(ExperimentConfig cfg, std::vector<Trajectory> train, const Checkpoint& from,
          FeedbackChannel* channel = nullptr);

  /// Runs until the (edit-extended) iteration budget is spent. On a
  /// non-finite loss a diagnostic checkpoint is written to
  /// `diagnostic_path` (when set) and the NumericError is rethrown.
  void run();
  /// Runs a single iteration including its leading boundary; false once the
  /// budget is spent.
  bool step();

  const PolicyModel& model() const noexcept { return model_; }
  PolicyModel& mutable_model() noexcept { return model_; }
  const FeedbackLedger& ledger() const noexcept { return ledger_; }
  const ShadowSchedule& shadow() const noexcept { return shadow_; }
  const std::vector<IterationLog>& log() const noexcept { return log_; }
  std::uint64_t iteration() const noexcept { return iteration_; }
  std::size_t query_count() const noexcept { return queries_; }
  std::size_t edit_count() const noexcept { return shadow_.edits; }
  std::size_t budget() const { return shadow_.effective_iterations(cfg_.epochs); }
  const std::vector<Trajectory>& data() const noexcept { return data_; }
  const ExperimentConfig& config() const noexcept { return cfg_; }

  /// Applies `events` in sequence order as at a boundary. Returns how many
  /// were applied; rejected ones are skipped.
  std::size_t apply_events(std::vector<FeedbackEvent> events);

  TrainingSnapshot snapshot() const;
  Checkpoint checkpoint() const;

  std::string diagnostic_path;

 private:
  struct BoundaryInfo {
    bool queried = false;
    std::size_t prototypes = 0, actions = 0, merges = 0;
    std::size_t applied = 0, rejected = 0;
  };
  void refresh_view();
  bool query_due() const noexcept;
  BoundaryInfo boundary(bool final);
  bool hitl_active() const noexcept;
  std::optional<ActionBucket> resolve_bucket(const ActionRef& ref) const;

  ExperimentConfig cfg_;
  std::vector<Trajectory> data_;
  FeedbackChannel* channel_ = nullptr;
  PolicyModel model_;
  FeedbackLedger ledger_;
  ShadowSchedule shadow_;
  OptimizerState opt_;
  std::mt19937_64 rng_;
  std::uint64_t iteration_ = 0;
  std::size_t queries_ = 0;
  std::vector<IterationLog> log_;

  // Full-data view refreshed at boundaries.
  Tensor finals_;
  std::vector<StepPrediction> steps_;
  LossBreakdown last_losses_;
  std::optional<std::uint64_t> view_at_;
  QuerySet pending_;
  std::size_t last_rejected_ = 0;
};

/// Initial prototype model: normalizer fitted on `train`, encoder seeded with
/// `seed`, prototypes placed on K distinct expert embeddings, head zeroed.
PolicyModel init_policy_model(std::span<const Trajectory> train, const ExperimentConfig& cfg);

}  // namespace protohail
