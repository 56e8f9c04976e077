#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "protohail/policy.hpp"
#include "protohail/prototypes.hpp"

namespace protohail {

/// A feedback event reused a sequence number that was already consumed.
class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Which side of the expert action counts as risky. For vCPUs a lower rate
/// packs more aggressively; for tickets a higher rate sells more seats.
enum class RiskSide { BelowExpert, AboveExpert };

inline bool is_risky(RiskSide side, double a, double a_expert) {
  return side == RiskSide::BelowExpert ? a < a_expert : a > a_expert;
}

struct PrototypeQuery {
  std::size_t id = 0;
  double mu = 0.0;
  double mean_dist = 0.0;
  std::size_t members = 0;
  double risk_share = 0.0;  // fraction of member steps flagged risky
};

struct ActionQuery {
  std::string traj;
  std::size_t traj_index = 0;
  std::size_t step = 0;
  double a = 0.0;
  double a_expert = 0.0;
  double uncertainty = 0.0;
  bool risk = false;
  ActionBucket bucket;
};

struct QuerySet {
  std::uint64_t iteration = 0;
  std::vector<PrototypeQuery> prototypes;
  std::vector<ActionQuery> actions;
  std::vector<std::pair<std::size_t, std::size_t>> merges;

  bool empty() const noexcept { return prototypes.empty() && actions.empty() && merges.empty(); }
};

enum class FeedbackKind { Up, Down, Merge, Split };
std::string to_string(FeedbackKind k);
FeedbackKind feedback_kind_from_string(const std::string& s);

struct ActionRef {
  std::string traj;
  std::size_t step = 0;
  friend bool operator==(const ActionRef&, const ActionRef&) = default;
};

struct FeedbackEvent {
  std::uint64_t seq = 0;
  std::uint64_t iteration = 0;
  FeedbackKind kind = FeedbackKind::Up;
  std::vector<std::size_t> prototypes;  // one id, or a pair
  std::optional<ActionRef> action;
  /// Filled in by the trainer when resolving an action target.
  std::optional<ActionBucket> bucket;
};

/// Cumulative +-1 votes per prototype, per prototype pair and per action bucket.
class FeedbackLedger {
 public:
  /// Applies the vote part of `e`; merge and split only consume the sequence
  /// number here (the structural edit is applied separately).
  void record(const FeedbackEvent& e);
  /// Throws ReplayError when `seq` is not beyond the last recorded one.
  void check_sequence(std::uint64_t seq) const;

  int prototype_total(std::size_t k) const;
  int pair_total(std::size_t i, std::size_t j) const;
  int action_total(const ActionBucket& b) const;
  bool empty() const noexcept;
  std::optional<std::uint64_t> last_sequence() const noexcept { return last_seq_; }

  /// Re-indexes after merging i and j into min(i, j). Votes on i, j and any
  /// pair or bucket that touched them are dropped: the merged prototype
  /// starts neutral.
  void remap_after_merge(std::size_t i, std::size_t j);
  /// The split-off prototype (index k_before) starts neutral; nothing else moves.
  void remap_after_split(std::size_t k_before);

  /// Advice gates for a model with `k` prototypes.
  LossGates gates(std::size_t k) const;

  const std::map<std::size_t, int>& prototype_votes() const noexcept { return proto_; }
  const std::map<std::pair<std::size_t, std::size_t>, int>& pair_votes() const noexcept {
    return pair_;
  }
  const std::map<ActionBucket, int>& action_votes() const noexcept { return action_; }

  /// Restores totals verbatim (checkpoint load).
  void restore(std::map<std::size_t, int> proto, std::map<std::pair<std::size_t, std::size_t>, int> pair,
               std::map<ActionBucket, int> action, std::optional<std::uint64_t> last_seq);

  friend bool operator==(const FeedbackLedger&, const FeedbackLedger&) = default;

 private:
  std::map<std::size_t, int> proto_;
  std::map<std::pair<std::size_t, std::size_t>, int> pair_;
  std::map<ActionBucket, int> action_;
  std::optional<std::uint64_t> last_seq_;
};

/// exp(-tanh(F)).
double advice_gate(double cumulative);

/// Normalized entropy of softmax(-d) over the member distances of prototype k.
double prototype_uncertainty(const PrototypeSet& protos, const Tensor& embeddings, std::size_t k);
/// Mean squared distance of prototype k's members; 0 for an empty cluster.
double mean_member_distance(const PrototypeSet& protos, const Tensor& embeddings, std::size_t k);
/// Bernoulli entropy of a, divided by ln 2.
double action_uncertainty(double a);

struct QueryConfig {
  double u_p = 0.55;
  double u_a = 0.55;
  std::size_t top_n = 5;
  double merge_percentile = 0.10;
  std::size_t max_action_queries = 5;
  /// Targets whose gate is already this close to its bound are not asked again.
  double saturation = 0.99;
  RiskSide risk_side = RiskSide::BelowExpert;
};

struct StepPrediction {
  std::size_t traj = 0;
  std::size_t step = 0;
  double a = 0.0;
  double a_expert = 0.0;
  ActionBucket bucket;
};

/// Prototype queries are uncertain prototypes among the top-N by mean member
/// distance. Action queries are uncertain risky steps, the largest shortfalls
/// first. Merge suggestions are pairs closer than the configured percentile
/// of all pairwise prototype distances.
QuerySet build_query(std::uint64_t iteration, const PrototypeSet& protos, const Tensor& embeddings,
                     std::span<const Trajectory> data, std::span<const StepPrediction> steps,
                     const FeedbackLedger& ledger, const QueryConfig& config);

/// Replaces prototypes i and j by their mean at index min(i, j).
void apply_merge(PolicyModel& model, std::size_t i, std::size_t j);
/// Adds a prototype at the embedding of the member of k farthest from p_k and
/// re-assigns k's members between the two. Returns the new prototype's index.
std::size_t apply_split(PolicyModel& model, std::size_t k, const Tensor& embeddings);

inline constexpr std::size_t kShadowIterations = 30;

/// Counts structural edits so the trainer can extend its schedule.
struct ShadowSchedule {
  std::size_t per_edit = kShadowIterations;
  std::size_t edits = 0;
  std::size_t remaining = 0;

  void on_edit() {
    ++edits;
    remaining += per_edit;
  }
  std::size_t effective_iterations(std::size_t base) const { return base + edits * per_edit; }
};

/// gated_full_loss with the gates implied by `ledger`.
LossBreakdown gated_full_loss(const PolicyModel& model, std::span<const Trajectory> data,
                              const LossWeights& weights, const FeedbackLedger& ledger);

/// Deterministic stand-in for the human operator.
struct OracleRules {
  double downvote_mu = 0.9;
  double risk_share = 0.5;
  /// "or": a prototype is downvoted when it is very uncertain or risk-dominated;
  /// "and": only when both hold. Other queried prototypes are upvoted.
  bool require_both = false;
  bool downvote_risky_actions = true;
  /// Merge a suggested pair when either side has at most this many members...
  std::size_t redundant_members = 1;
  /// ...or when the pair is closer than this; otherwise downvote the pair.
  double merge_distance = 0.0;
  std::size_t min_prototypes = 2;
  bool allow_split = false;
  double split_mu = 0.95;
  std::size_t split_min_members = 4;
};

class ScriptedOracle {
 public:
  explicit ScriptedOracle(OracleRules rules, std::uint64_t first_seq = 1)
      : rules_(rules), next_seq_(first_seq) {}

  /// Events answering `q`. `k` is the current prototype count, `member_counts`
  /// the current cluster sizes, `pair_distance(i,j)` the squared prototype distance.
  std::vector<FeedbackEvent> respond(const QuerySet& q, std::size_t k,
                                     std::span<const std::size_t> member_counts,
                                     const std::function<double(std::size_t, std::size_t)>& pair_distance);
  const OracleRules& rules() const noexcept { return rules_; }
  std::uint64_t next_sequence() const noexcept { return next_seq_; }

 private:
  OracleRules rules_;
  std::uint64_t next_seq_;
};

/// Parses the oracle rule table from key = value text.
OracleRules parse_oracle_rules(const std::string& text);
std::string format_oracle_rules(const OracleRules& rules);

}  // namespace protohail
