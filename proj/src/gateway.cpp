#include "protohail/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "httplib.h"
#include "protohail/kvconfig.hpp"

namespace protohail {

using nlohmann::json;

namespace {

constexpr const char* kFinalHeader = "X-Protohail-Final";

json losses_json(const LossBreakdown& l) {
  return json{{"rep", l.rep}, {"div", l.div}, {"int", l.intr}, {"im", l.im}, {"total", l.total}};
}

std::uint64_t unsigned_field(const json& j, const char* name) {
  if (!j.contains(name)) throw ConfigError(std::string("feedback: missing '") + name + "'");
  const json& v = j.at(name);
  if (!v.is_number_unsigned()) {
    throw ConfigError(std::string("feedback: '") + name + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

SubmitResult rejection(SubmitStatus status, std::uint64_t seq, std::string code, std::string detail) {
  SubmitResult r;
  r.status = status;
  r.seq = seq;
  r.code = std::move(code);
  r.detail = std::move(detail);
  return r;
}

}  // namespace

json queries_to_json(const QuerySet& q) {
  json protos = json::array(), actions = json::array(), merges = json::array();
  for (const PrototypeQuery& p : q.prototypes) protos.push_back(p.id);
  for (const ActionQuery& a : q.actions) {
    actions.push_back({{"traj", a.traj}, {"step", a.step}, {"a", a.a}, {"a_expert", a.a_expert}, {"risk", a.risk}});
  }
  for (const auto& [i, j] : q.merges) merges.push_back(json::array({i, j}));
  return json{{"prototypes", protos}, {"actions", actions}, {"merge_suggestions", merges}};
}

json snapshot_to_json(const TrainingSnapshot& s) {
  json protos = json::array();
  for (const PrototypeStats& p : s.prototypes) {
    protos.push_back({{"id", p.id},
                      {"mu", p.mu},
                      {"members", p.members},
                      {"mean_dist", p.mean_dist},
                      {"votes", p.votes},
                      {"explanation_id", p.explanation_id},
                      {"series", p.series}});
  }
  return json{{"iteration", s.iteration},
              {"losses", losses_json(s.losses)},
              {"prototypes", protos},
              {"queries", queries_to_json(s.queries)}};
}

json feedback_to_json(const FeedbackEvent& e) {
  json j{{"seq", e.seq}, {"kind", to_string(e.kind)}};
  if (e.action) {
    j["target"] = {{"traj", e.action->traj}, {"step", e.action->step}};
  } else {
    j["target"] = e.prototypes;
  }
  return j;
}

FeedbackEvent feedback_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("feedback: expected an object");
  FeedbackEvent e;
  e.seq = unsigned_field(j, "seq");
  if (!j.contains("kind") || !j.at("kind").is_string()) throw ConfigError("feedback: 'kind' must be a string");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "up" && kind != "down" && kind != "merge" && kind != "split") {
    throw ConfigError("feedback: unknown kind '" + kind + "'");
  }
  e.kind = feedback_kind_from_string(kind);
  if (!j.contains("target")) throw ConfigError("feedback: missing 'target'");
  const json& t = j.at("target");
  if (t.is_array()) {
    for (const json& id : t) {
      if (!id.is_number_unsigned()) throw ConfigError("feedback: prototype ids must be non-negative integers");
      e.prototypes.push_back(id.get<std::size_t>());
    }
  } else if (t.is_object()) {
    if (!t.contains("traj") || !t.at("traj").is_string()) throw ConfigError("feedback: target.traj must be a string");
    e.action = ActionRef{t.at("traj").get<std::string>(), static_cast<std::size_t>(unsigned_field(t, "step"))};
  } else {
    throw ConfigError("feedback: 'target' must be an id array or {traj, step}");
  }
  return e;
}

RemoteView remote_view_from_json(const json& j) {
  try {
    RemoteView v;
    v.iteration = j.at("iteration").get<std::uint64_t>();
    const json& protos = j.at("prototypes");
    v.k = protos.size();
    std::vector<PrototypeQuery> stats;
    for (const json& p : protos) {
      PrototypeQuery s;
      s.id = p.at("id").get<std::size_t>();
      s.mu = p.at("mu").get<double>();
      s.members = p.at("members").get<std::size_t>();
      s.mean_dist = p.at("mean_dist").get<double>();
      v.members.push_back(s.members);
      stats.push_back(s);
    }
    const json& q = j.at("queries");
    v.queries.iteration = v.iteration;
    for (const json& id : q.at("prototypes")) {
      const auto k = id.get<std::size_t>();
      if (k >= stats.size()) throw ConfigError("snapshot: queried prototype " + std::to_string(k) + " out of range");
      v.queries.prototypes.push_back(stats[k]);
    }
    for (const json& a : q.at("actions")) {
      ActionQuery aq;
      aq.traj = a.at("traj").get<std::string>();
      aq.step = a.at("step").get<std::size_t>();
      aq.a = a.at("a").get<double>();
      aq.a_expert = a.at("a_expert").get<double>();
      aq.risk = a.at("risk").get<bool>();
      v.queries.actions.push_back(std::move(aq));
    }
    for (const json& m : q.at("merge_suggestions")) {
      v.queries.merges.emplace_back(m.at(0).get<std::size_t>(), m.at(1).get<std::size_t>());
    }
    return v;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed snapshot: ") + e.what());
  }
}

int SubmitResult::http_status() const noexcept {
  switch (status) {
    case SubmitStatus::Accepted: return 200;
    case SubmitStatus::Malformed: return 400;
    case SubmitStatus::Replay: return 409;
    case SubmitStatus::InvalidTarget: return 422;
    case SubmitStatus::Closed: return 503;
  }
  return 500;
}

json SubmitResult::to_json() const {
  if (status == SubmitStatus::Accepted) {
    return json{{"status", "accepted"}, {"seq", seq}, {"apply_iteration", apply_iteration}};
  }
  return json{{"status", "rejected"}, {"seq", seq}, {"code", code}, {"detail", detail}};
}

FeedbackGateway::FeedbackGateway(GatewayOptions opts, std::vector<TrajectoryInfo> trajectories)
    : opts_(std::move(opts)), trajectories_(std::move(trajectories)), server_(std::make_unique<httplib::Server>()) {
  // httplib's default also sets SO_REUSEPORT, which would let a second
  // gateway share the port silently.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  install_routes();
}

FeedbackGateway::~FeedbackGateway() { stop(); }

void FeedbackGateway::start() {
  if (thread_.joinable()) return;
  if (opts_.port == 0) {
    port_ = server_->bind_to_any_port(opts_.host);
    if (port_ < 0) throw GatewayError("cannot bind " + opts_.host + " on any port");
  } else {
    if (!server_->bind_to_port(opts_.host, opts_.port)) {
      throw GatewayError("cannot bind " + opts_.host + ":" + std::to_string(opts_.port));
    }
    port_ = opts_.port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (!server_->is_running()) {
    if (std::chrono::steady_clock::now() > deadline) {
      server_->stop();
      thread_.join();
      throw GatewayError("server on " + opts_.host + ":" + std::to_string(port_) + " did not start");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

void FeedbackGateway::stop() {
  {
    std::unique_lock lk(mu_);
    stopping_ = true;
    events_cv_.notify_all();
    stream_cv_.notify_all();
    // Open streams get a moment to deliver what is already published.
    stream_cv_.wait_for(lk, std::chrono::seconds(2), [&] { return streams_ == 0; });
  }
  if (thread_.joinable()) {
    server_->stop();
    thread_.join();
  }
}

std::shared_ptr<const std::string> FeedbackGateway::latest() const {
  std::lock_guard lk(mu_);
  return history_.empty() ? nullptr : history_.back().body;
}

std::size_t FeedbackGateway::queued() const {
  std::lock_guard lk(mu_);
  return queue_.size();
}

void FeedbackGateway::publish(const TrainingSnapshot& s) {
  Published p;
  p.iteration = s.iteration;
  p.final = s.final;
  p.body = std::make_shared<const std::string>(snapshot_to_json(s).dump());
  p.queries = std::make_shared<const std::string>(queries_to_json(s.queries).dump());
  {
    std::lock_guard lk(mu_);
    // A repeated boundary (the pre-training snapshot, then boundary 0)
    // replaces the latest state instead of adding a stream message.
    if (!history_.empty() && history_.back().iteration == s.iteration && !history_.back().final) {
      history_.back() = std::move(p);
    } else {
      history_.push_back(std::move(p));
    }
    k_ = s.k;
    members_.clear();
    for (const PrototypeStats& ps : s.prototypes) members_.push_back(ps.members);
    if (!s.final) next_apply_ = s.iteration;
  }
  stream_cv_.notify_all();
}

std::optional<SubmitResult> FeedbackGateway::target_problem(const FeedbackEvent& e) const {
  auto invalid = [&](std::string code, std::string detail) {
    return rejection(SubmitStatus::InvalidTarget, e.seq, std::move(code), std::move(detail));
  };
  for (std::size_t id : e.prototypes) {
    if (id >= k_) return invalid("unknown_prototype", "prototype " + std::to_string(id) + " does not exist");
  }
  if (e.action) {
    if (e.kind != FeedbackKind::Up && e.kind != FeedbackKind::Down)
      return invalid("bad_kind", "only up/down votes may target an action");
    const auto it = std::find_if(trajectories_.begin(), trajectories_.end(),
                                 [&](const TrajectoryInfo& t) { return t.id == e.action->traj; });
    if (it == trajectories_.end()) return invalid("unknown_trajectory", "no trajectory '" + e.action->traj + "'");
    if (e.action->step >= it->length) {
      return invalid("step_out_of_range", "step " + std::to_string(e.action->step) + " beyond length " +
                                              std::to_string(it->length));
    }
    return std::nullopt;
  }
  switch (e.kind) {
    case FeedbackKind::Up:
    case FeedbackKind::Down:
      if (e.prototypes.size() == 1) return std::nullopt;
      if (e.prototypes.size() == 2 && e.prototypes[0] != e.prototypes[1]) return std::nullopt;
      return invalid("bad_target", "a vote targets one prototype or two distinct ones");
    case FeedbackKind::Merge:
      if (e.prototypes.size() != 2) return invalid("bad_target", "merge needs two prototype ids");
      if (e.prototypes[0] == e.prototypes[1]) return invalid("merge_self", "cannot merge a prototype with itself");
      return std::nullopt;
    case FeedbackKind::Split:
      if (e.prototypes.size() != 1) return invalid("bad_target", "split needs one prototype id");
      if (members_.size() == k_ && members_[e.prototypes[0]] < 2)
        return invalid("split_singleton", "prototype " + std::to_string(e.prototypes[0]) + " has fewer than 2 members");
      return std::nullopt;
  }
  return invalid("bad_kind", "unknown feedback kind");
}

SubmitResult FeedbackGateway::submit(const FeedbackEvent& e) {
  std::lock_guard lk(mu_);
  if (stopping_ || (!history_.empty() && history_.back().final)) {
    return rejection(SubmitStatus::Closed, e.seq, "closed", "training has finished");
  }
  if ((last_drained_ && e.seq <= *last_drained_) || queue_.count(e.seq)) {
    return rejection(SubmitStatus::Replay, e.seq, "replay", "sequence number " + std::to_string(e.seq) + " already used");
  }
  if (auto problem = target_problem(e)) return *problem;
  queue_.emplace(e.seq, e);
  SubmitResult ok;
  ok.seq = e.seq;
  ok.apply_iteration = next_apply_;
  events_cv_.notify_all();
  return ok;
}

std::vector<FeedbackEvent> FeedbackGateway::collect(const QuerySet* posed, const TrainingSnapshot& snapshot,
                                                    const PolicyModel&) {
  std::vector<FeedbackEvent> out;
  {
    std::unique_lock lk(mu_);
    if (posed && opts_.query_wait_ms > 0) {
      events_cv_.wait_for(lk, std::chrono::milliseconds(opts_.query_wait_ms),
                          [&] { return !queue_.empty() || stopping_; });
    }
    for (auto& [seq, e] : queue_) {
      e.iteration = snapshot.iteration;
      out.push_back(std::move(e));
    }
    queue_.clear();
    if (!out.empty()) last_drained_ = out.back().seq;
    next_apply_ = snapshot.iteration + 1;
  }
  if (!out.empty() && !opts_.event_log.empty()) {
    std::ofstream log(opts_.event_log, std::ios::app);
    for (const FeedbackEvent& e : out) {
      json j = feedback_to_json(e);
      j["apply_iteration"] = e.iteration;
      log << j.dump() << '\n';
    }
  }
  return out;
}

void FeedbackGateway::install_routes() {
  httplib::Server& s = *server_;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Content-Type"},
                         {"Access-Control-Expose-Headers", kFinalHeader}});
  s.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  auto latest_of = [this](bool queries, httplib::Response& res) {
    std::shared_ptr<const std::string> body;
    bool final = false;
    {
      std::lock_guard lk(mu_);
      if (!history_.empty()) {
        body = queries ? history_.back().queries : history_.back().body;
        final = history_.back().final;
      }
    }
    if (!body) {
      res.status = 503;
      res.set_content(json{{"error", "no snapshot published yet"}}.dump(), "application/json");
      return;
    }
    res.set_header(kFinalHeader, final ? "1" : "0");
    res.set_content(*body, "application/json");
  };
  s.Get("/state", [latest_of](const httplib::Request&, httplib::Response& res) { latest_of(false, res); });
  s.Get("/queries", [latest_of](const httplib::Request&, httplib::Response& res) { latest_of(true, res); });

  s.Post("/feedback", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      res.status = 400;
      res.set_content(json{{"status", "rejected"}, {"code", "malformed"}, {"detail", e.what()}}.dump(),
                      "application/json");
      return;
    }
    auto one = [this](const json& j) {
      try {
        return submit(feedback_from_json(j));
      } catch (const ConfigError& e) {
        const std::uint64_t seq = j.is_object() && j.contains("seq") && j["seq"].is_number_unsigned()
                                      ? j["seq"].get<std::uint64_t>()
                                      : 0;
        return rejection(SubmitStatus::Malformed, seq, "malformed", e.what());
      }
    };
    if (body.is_array()) {
      json results = json::array();
      int status = 200;
      for (const json& j : body) {
        const SubmitResult r = one(j);
        if (status == 200 && r.status != SubmitStatus::Accepted) status = r.http_status();
        results.push_back(r.to_json());
      }
      res.status = status;
      res.set_content(results.dump(), "application/json");
    } else {
      const SubmitResult r = one(body);
      res.status = r.http_status();
      res.set_content(r.to_json().dump(), "application/json");
    }
  });

  s.Get("/stream", [this](const httplib::Request&, httplib::Response& res) {
    std::size_t start = 0;
    {
      std::lock_guard lk(mu_);
      if (!history_.empty()) start = history_.size() - 1;
    }
    auto cursor = std::make_shared<std::size_t>(start);
    {
      std::lock_guard lk(mu_);
      ++streams_;
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
      std::vector<Published> batch;
      bool done = false;
      {
        std::unique_lock lk(mu_);
        stream_cv_.wait_for(lk, std::chrono::milliseconds(250),
                            [&] { return history_.size() > *cursor || stopping_; });
        while (*cursor < history_.size()) batch.push_back(history_[(*cursor)++]);
        done = (!history_.empty() && history_.back().final && *cursor == history_.size()) ||
               (stopping_ && *cursor == history_.size());
      }
      for (const Published& p : batch) {
        const std::string msg = std::string("event: ") + (p.final ? "final" : "snapshot") +
                                "\nid: " + std::to_string(p.iteration) + "\ndata: " + *p.body + "\n\n";
        if (!sink.write(msg.data(), msg.size())) return false;
      }
      if (done) {
        sink.done();
        return true;
      }
      return sink.is_writable();
    }, [this](bool) {
      {
        std::lock_guard lk(mu_);
        --streams_;
      }
      stream_cv_.notify_all();
    });
  });
}

}  // namespace protohail
