// Command-line front end: data generation, training, evaluation, the K
// sweep, the pressure test, and the interactive gateway.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <thread>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "httplib.h"
#include "protohail/experiment.hpp"
#include "protohail/gateway.hpp"
#include "protohail/kvconfig.hpp"

namespace fs = std::filesystem;
using namespace protohail;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitStartup = 1;

std::string flag_name(const std::string& key) {
  std::string s = key;
  for (char& c : s)
    if (c == '_') c = '-';
  return "--" + s;
}

struct Settings {
  std::string config_file;
  std::map<std::string, std::string> overrides;

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (!config_file.empty()) cfg = parse_config(read_text_file(config_file));
    for (const auto& [key, value] : overrides) apply_setting(cfg, key, value);
    cfg.validate();
    return cfg;
  }
};

/// The run directory: $PROTOHAIL_OUTPUT_ROOT/<output_dir>/<domain>-seed<seed>.
fs::path run_dir(const ExperimentConfig& cfg) {
  fs::path base = cfg.output_dir;
  if (const char* root = std::getenv("PROTOHAIL_OUTPUT_ROOT"); root && *root && base.is_relative()) {
    base = fs::path(root) / base;
  }
  const fs::path dir = base / (to_string(cfg.domain) + "-seed" + std::to_string(cfg.seed));
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
}

void write_run_config(const fs::path& dir, const ExperimentConfig& cfg) {
  write_text(dir / "config.txt", format_config(cfg));
}

void write_log_csv(const fs::path& path, const std::vector<IterationLog>& log) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << "iteration,k,rep,div,int,im,total,queried,applied,rejected,shadow\n";
  for (const IterationLog& l : log) {
    f << l.iteration << ',' << l.k << ',' << l.losses.rep << ',' << l.losses.div << ',' << l.losses.intr << ','
      << l.losses.im << ',' << l.losses.total << ',' << l.queried << ',' << l.events_applied << ','
      << l.events_rejected << ',' << l.shadow << '\n';
  }
}

json result_json(const MethodResult& r) {
  return json{{"method", r.method}, {"risk", r.risk}, {"benefit", r.benefit}, {"reward", r.reward}};
}

Checkpoint bc_checkpoint(const ExperimentConfig& cfg, const BcModel& model) {
  Checkpoint c;
  c.kind = "bc";
  c.config_text = format_config(cfg);
  c.config_hash = config_hash(cfg);
  c.bc = model;
  return c;
}

int cmd_simulate(const ExperimentConfig& cfg) {
  const fs::path dir = run_dir(cfg);
  write_run_config(dir, cfg);
  const DomainData data = generate_domain(cfg);
  const DataSplit split = split_by_entity(data.trajectories, cfg.train_fraction, cfg.seed);
  save_dataset((dir / "data.jsonl").string(), data.trajectories);
  save_dataset((dir / "train.jsonl").string(), split.train);
  save_dataset((dir / "test.jsonl").string(), split.test);
  std::cout << "wrote " << data.trajectories.size() << " trajectories (" << split.train.size() << " train, "
            << split.test.size() << " test) to " << dir.string() << "\n";
  return 0;
}

std::vector<Trajectory> training_set(const ExperimentConfig& cfg, const std::string& data_path) {
  if (!data_path.empty()) return load_dataset(data_path);
  const DomainData data = generate_domain(cfg);
  return split_by_entity(data.trajectories, cfg.train_fraction, cfg.seed).train;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& method, const std::string& data_path,
              const std::string& resume) {
  const fs::path dir = run_dir(cfg);
  write_run_config(dir, cfg);
  const std::vector<Trajectory> train = training_set(cfg, data_path);
  if (method == "bc") {
    const BcModel model = train_bc(cfg, train);
    save_checkpoint((dir / "bc.json").string(), bc_checkpoint(cfg, model));
    std::cout << "trained BC on " << train.size() << " trajectories; checkpoint " << (dir / "bc.json").string()
              << "\n";
    return 0;
  }
  std::optional<Checkpoint> from;
  if (!resume.empty()) from = load_checkpoint(resume);
  std::optional<OracleChannel> oracle;
  if (cfg.hitl.enabled && cfg.hitl.source == FeedbackSource::Oracle) {
    const auto last = from ? from->ledger.last_sequence() : std::nullopt;
    oracle.emplace(load_oracle_rules(cfg), last ? *last + 1 : 1);
  }
  FeedbackChannel* channel = oracle ? &*oracle : nullptr;
  std::optional<Trainer> trainer;
  if (from) {
    trainer.emplace(cfg, train, *from, channel);
  } else {
    trainer.emplace(cfg, train, channel);
  }
  trainer->diagnostic_path = (dir / "diagnostic.json").string();
  trainer->run();
  save_checkpoint((dir / "checkpoint.json").string(), trainer->checkpoint());
  write_log_csv(dir / "train_log.csv", trainer->log());
  std::cout << "trained ProtoHAIL: " << trainer->iteration() << " iterations, " << trainer->query_count()
            << " queries, " << trainer->edit_count() << " structural edits, K=" << trainer->model().protos.count()
            << "; checkpoint " << (dir / "checkpoint.json").string() << "\n";
  return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  if (!checkpoint_path.empty()) {
    const Checkpoint c = load_checkpoint(checkpoint_path);
    ExperimentConfig run = parse_config(c.config_text);
    const DomainData data = generate_domain(run);
    MethodResult r;
    if (c.kind == "bc") {
      BcController ctl(*c.bc);
      r = evaluate_controller(data, ctl, run);
    } else {
      PrototypeController ctl(*c.model);
      r = evaluate_controller(data, ctl, run);
    }
    std::cout << result_json(r).dump(2) << "\n";
    return 0;
  }
  const fs::path dir = run_dir(cfg);
  write_run_config(dir, cfg);
  const Table1 t = run_table1(cfg);
  const std::string table = format_table1(t);
  write_text(dir / "table1.md", table);
  json rows = json::array();
  for (const MethodResult& r : t.rows) rows.push_back(result_json(r));
  write_text(dir / "table1.json", json{{"seed", t.seed},
                                       {"domain", to_string(cfg.domain)},
                                       {"rows", rows},
                                       {"queries", t.protohail.queries},
                                       {"edits", t.protohail.edits},
                                       {"grid_rate", t.grid.best.rate},
                                       {"seconds", t.seconds}}
                                      .dump(2));
  save_checkpoint((dir / "checkpoint.json").string(), t.protohail.checkpoint);
  write_log_csv(dir / "train_log.csv", t.protohail.log);
  std::cout << table << "queries " << t.protohail.queries << ", edits " << t.protohail.edits << ", "
            << t.seconds << " s\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  const fs::path dir = run_dir(cfg);
  write_run_config(dir, cfg);
  const std::string table = format_sweep(run_sweep(cfg), cfg.domain);
  write_text(dir / "sweep.md", table);
  std::cout << table;
  return 0;
}

int cmd_pressure(const ExperimentConfig& cfg) {
  if (cfg.domain != Domain::Cloud) throw ConfigError("pressure applies to the cloud domain");
  const fs::path dir = run_dir(cfg);
  write_run_config(dir, cfg);
  const Table1 t = run_table1(cfg);
  const std::string table = format_pressure(run_pressure(t, cfg), cfg.hot_threshold, cfg.pressure_threshold);
  write_text(dir / "pressure.md", table);
  std::cout << table;
  return 0;
}

int cmd_serve(ExperimentConfig cfg) {
  cfg.hitl.source = FeedbackSource::Interactive;
  const fs::path dir = run_dir(cfg);
  write_run_config(dir, cfg);
  const DomainData data = generate_domain(cfg);
  const DataSplit split = split_by_entity(data.trajectories, cfg.train_fraction, cfg.seed);
  std::vector<TrajectoryInfo> infos;
  for (const Trajectory& t : split.train) infos.push_back({t.entity_id, t.length()});

  GatewayOptions opts;
  opts.host = cfg.bind_host;
  opts.port = cfg.port;
  opts.query_wait_ms = cfg.hitl.query_wait_ms;
  opts.event_log = (dir / "events.jsonl").string();
  FeedbackGateway gateway(opts, infos);
  Trainer trainer(cfg, split.train, &gateway);
  trainer.diagnostic_path = (dir / "diagnostic.json").string();
  gateway.publish(trainer.snapshot());
  gateway.start();
  std::cout << "serving on http://" << cfg.bind_host << ":" << gateway.port() << std::endl;
  trainer.run();
  gateway.stop();
  save_checkpoint((dir / "checkpoint.json").string(), trainer.checkpoint());
  write_log_csv(dir / "train_log.csv", trainer.log());
  std::cout << "training finished after " << trainer.iteration() << " iterations, " << trainer.query_count()
            << " queries, " << trainer.edit_count() << " structural edits\n";
  return 0;
}

/// Answers every query a running `serve` publishes with the scripted oracle.
int cmd_oracle(const ExperimentConfig& cfg, const std::string& url, int poll_ms) {
  const OracleRules rules = load_oracle_rules(cfg);
  ScriptedOracle oracle(rules);
  httplib::Client cli(url);
  cli.set_connection_timeout(2, 0);
  std::set<std::uint64_t> answered;
  bool seen = false;
  int failures = 0;
  std::size_t sent = 0;
  for (;;) {
    auto res = cli.Get("/state");
    if (!res || res->status != 200) {
      // Before the first contact keep trying for a while; afterwards a
      // vanished server means training ended.
      if (seen || ++failures > 100) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(poll_ms));
      continue;
    }
    seen = true;
    const RemoteView view = remote_view_from_json(json::parse(res->body));
    if (res->get_header_value("X-Protohail-Final") == "1") break;
    if (!view.queries.empty() && answered.insert(view.iteration).second) {
      const auto events = oracle.respond(view.queries, view.k, view.members, {});
      json batch = json::array();
      for (const FeedbackEvent& e : events) batch.push_back(feedback_to_json(e));
      if (!batch.empty()) {
        auto ack = cli.Post("/feedback", batch.dump(), "application/json");
        if (ack) {
          std::cout << "iteration " << view.iteration << ": sent " << batch.size() << " events, HTTP "
                    << ack->status << "\n";
          sent += batch.size();
        }
      }
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(poll_ms));
  }
  std::cout << "oracle sent " << sent << " events to " << answered.size() << " queries\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Training allocates and frees large tapes every iteration; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Prototype-based imitation learning with human feedback for oversubscription"};
  app.require_subcommand(1);
  app.fallthrough();

  Settings settings;
  app.add_option("--config", settings.config_file, "key = value config file; flags override it")
      ->check(CLI::ExistingFile);
  for (const std::string& key : config_keys()) {
    const ExperimentConfig defaults;
    app.add_option_function<std::string>(
        flag_name(key), [&settings, key](const std::string& v) { settings.overrides[key] = v; },
        "default: " + get_setting(defaults, key));
  }

  auto* simulate = app.add_subcommand("simulate", "generate and write the domain's trajectories");
  auto* train = app.add_subcommand("train", "train a policy and write a checkpoint");
  std::string method = "protohail", data_path, resume;
  train->add_option("--method", method, "protohail or bc")->check(CLI::IsMember({"protohail", "bc"}));
  train->add_option("--data", data_path, "train on this JSONL dataset instead of generating one");
  train->add_option("--resume", resume, "continue from a protohail checkpoint");
  auto* evaluate = app.add_subcommand("evaluate", "run every method and print the results table");
  std::string checkpoint_path;
  evaluate->add_option("--checkpoint", checkpoint_path, "score one checkpoint instead");
  auto* sweep = app.add_subcommand("sweep", "train and score ProtoHAIL for each K in sweep_k");
  auto* pressure = app.add_subcommand("pressure", "re-score under the lowered hot threshold (cloud)");
  auto* serve = app.add_subcommand("serve", "train with the feedback gateway attached");
  auto* oracle = app.add_subcommand("oracle", "answer a running serve instance's queries by script");
  std::string url;
  int poll_ms = 100;
  oracle->add_option("--url", url, "gateway address, default http://<bind>:<port>");
  oracle->add_option("--poll-ms", poll_ms, "polling interval")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const ExperimentConfig cfg = settings.resolve();
    if (*simulate) return cmd_simulate(cfg);
    if (*train) return cmd_train(cfg, method, data_path, resume);
    if (*evaluate) return cmd_evaluate(cfg, checkpoint_path);
    if (*sweep) return cmd_sweep(cfg);
    if (*pressure) return cmd_pressure(cfg);
    if (*serve) return cmd_serve(cfg);
    if (*oracle) {
      return cmd_oracle(cfg, url.empty() ? "http://" + cfg.bind_host + ":" + std::to_string(cfg.port) : url,
                        poll_ms);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const GatewayError& e) {
    std::cerr << "startup error: " << e.what() << "\n";
    return kExitStartup;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
