#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "protohail/trainer.hpp"

namespace httplib {
class Server;
}

namespace protohail {

/// Raised when the gateway cannot bind its listening socket.
class GatewayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wire codec. Field names follow the dashboard protocol exactly.
nlohmann::json snapshot_to_json(const TrainingSnapshot& s);
nlohmann::json queries_to_json(const QuerySet& q);
nlohmann::json feedback_to_json(const FeedbackEvent& e);
/// Throws ConfigError when `j` is not a well-formed feedback object.
FeedbackEvent feedback_from_json(const nlohmann::json& j);

/// Parses a snapshot back into the pieces a remote oracle needs: the query
/// set (prototype stats joined from the snapshot) and per-prototype member
/// counts. Prototype risk shares are not on the wire and read as 0.
struct RemoteView {
  std::uint64_t iteration = 0;
  std::size_t k = 0;
  std::vector<std::size_t> members;
  QuerySet queries;
  bool final = false;
};
RemoteView remote_view_from_json(const nlohmann::json& snapshot);

enum class SubmitStatus { Accepted, Malformed, Replay, InvalidTarget, Closed };

struct SubmitResult {
  SubmitStatus status = SubmitStatus::Accepted;
  std::uint64_t seq = 0;
  /// Boundary iteration at which an accepted event will be drained.
  std::uint64_t apply_iteration = 0;
  std::string code;    // machine-readable reason on rejection
  std::string detail;  // human-readable reason on rejection

  int http_status() const noexcept;
  nlohmann::json to_json() const;
};

struct TrajectoryInfo {
  std::string id;
  std::size_t length = 0;
};

struct GatewayOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  /// How long collect() waits for the first answer after a query is posed.
  int query_wait_ms = 2000;
  /// Accepted events are appended here as JSON lines when non-empty.
  std::string event_log;
};

/// HTTP front end for a running Trainer.
///
///   GET  /state     latest snapshot
///   GET  /queries   the pending query set of the latest snapshot
///   POST /feedback  one feedback object or an array of them
///   GET  /stream    server-sent events, one snapshot per published boundary
///
/// Submissions are validated against the latest snapshot and queued by
/// sequence number; the trainer drains the queue from collect() at its next
/// boundary, so the model is only ever touched by the training thread.
class FeedbackGateway final : public FeedbackChannel {
 public:
  FeedbackGateway(GatewayOptions opts, std::vector<TrajectoryInfo> trajectories);
  ~FeedbackGateway() override;
  FeedbackGateway(const FeedbackGateway&) = delete;
  FeedbackGateway& operator=(const FeedbackGateway&) = delete;

  /// Binds and starts serving on a background thread. Throws GatewayError.
  void start();
  /// Lets open streams deliver the final snapshot, then stops the server.
  void stop();
  int port() const noexcept { return port_; }

  SubmitResult submit(const FeedbackEvent& e);

  void publish(const TrainingSnapshot& s) override;
  bool wants_snapshots() const override { return true; }
  std::vector<FeedbackEvent> collect(const QuerySet* posed, const TrainingSnapshot& snapshot,
                                     const PolicyModel& model) override;

  /// Serialized latest snapshot, or null before the first publish.
  std::shared_ptr<const std::string> latest() const;
  std::size_t queued() const;

 private:
  struct Published {
    std::uint64_t iteration = 0;
    bool final = false;
    std::shared_ptr<const std::string> body;
    std::shared_ptr<const std::string> queries;
  };
  std::optional<SubmitResult> target_problem(const FeedbackEvent& e) const;
  void install_routes();

  GatewayOptions opts_;
  std::vector<TrajectoryInfo> trajectories_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;

  mutable std::mutex mu_;
  std::condition_variable events_cv_;
  std::condition_variable stream_cv_;
  std::vector<Published> history_;
  std::size_t k_ = 0;
  std::vector<std::size_t> members_;
  std::map<std::uint64_t, FeedbackEvent> queue_;
  std::optional<std::uint64_t> last_drained_;
  std::uint64_t next_apply_ = 0;
  std::size_t streams_ = 0;
  bool stopping_ = false;
};

}  // namespace protohail
