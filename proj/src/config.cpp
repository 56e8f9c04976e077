#include "protohail/config.hpp"

#include <charconv>
#include <functional>
#include <cctype>
#include <cstdio>
#include <sstream>

namespace protohail {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const KeyValue&)> set;
};

std::size_t as_size(const KeyValue& kv) {
  const long long v = parse_int(kv);
  if (v < 0) throw ConfigError(kv.key + ": must be non-negative, got " + kv.value);
  return static_cast<std::size_t>(v);
}

#define PH_DOUBLE(name, member)                                              \
  {name, Field{[](const ExperimentConfig& c) { return fmt(c.member); },        \
               [](ExperimentConfig& c, const KeyValue& kv) { c.member = parse_double(kv); }}}
#define PH_SIZE(name, member)                                                \
  {name, Field{[](const ExperimentConfig& c) { return fmt_int(c.member); },    \
               [](ExperimentConfig& c, const KeyValue& kv) { c.member = as_size(kv); }}}
#define PH_BOOL(name, member)                                                \
  {name, Field{[](const ExperimentConfig& c) { return fmt_bool(c.member); },   \
               [](ExperimentConfig& c, const KeyValue& kv) { c.member = parse_bool(kv); }}}
#define PH_STRING(name, member)                                              \
  {name, Field{[](const ExperimentConfig& c) { return c.member; },             \
               [](ExperimentConfig& c, const KeyValue& kv) { c.member = kv.value; }}}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table{
      {"domain", Field{[](const ExperimentConfig& c) { return to_string(c.domain); },
                       [](ExperimentConfig& c, const KeyValue& kv) {
                         try {
                           c.domain = domain_from_string(kv.value);
                         } catch (const std::exception&) {
                           throw ConfigError("domain: expected cloud or airline, got '" + kv.value + "'");
                         }
                       }}},
      {"seed", Field{[](const ExperimentConfig& c) { return fmt_int(c.seed); },
                     [](ExperimentConfig& c, const KeyValue& kv) { c.seed = as_size(kv); }}},
      PH_SIZE("k", k),
      PH_DOUBLE("w1", weights.w1),
      PH_DOUBLE("w2", weights.w2),
      PH_DOUBLE("w3", weights.w3),
      PH_DOUBLE("w4", weights.w4),
      PH_DOUBLE("learning_rate", learning_rate),
      PH_SIZE("hidden", hidden),
      PH_SIZE("batch_size", batch_size),
      PH_SIZE("epochs", epochs),
      {"imitation", Field{[](const ExperimentConfig& c) {
                            return std::string(c.imitation == ImitationLoss::CrossEntropy ? "ce" : "se");
                          },
                          [](ExperimentConfig& c, const KeyValue& kv) {
                            if (kv.value == "ce") c.imitation = ImitationLoss::CrossEntropy;
                            else if (kv.value == "se") c.imitation = ImitationLoss::SquaredError;
                            else throw ConfigError("imitation: expected ce or se, got '" + kv.value + "'");
                          }}},
      PH_BOOL("hitl", hitl.enabled),
      PH_SIZE("frequency", hitl.frequency),
      PH_DOUBLE("u_p", hitl.u_p),
      PH_DOUBLE("u_a", hitl.u_a),
      PH_SIZE("top_n", hitl.top_n),
      PH_SIZE("shadow", hitl.shadow),
      PH_DOUBLE("merge_percentile", hitl.merge_percentile),
      PH_SIZE("max_action_queries", hitl.max_action_queries),
      {"feedback", Field{[](const ExperimentConfig& c) { return to_string(c.hitl.source); },
                         [](ExperimentConfig& c, const KeyValue& kv) {
                           if (kv.value == "interactive") c.hitl.source = FeedbackSource::Interactive;
                           else if (kv.value == "oracle") c.hitl.source = FeedbackSource::Oracle;
                           else if (kv.value == "none") c.hitl.source = FeedbackSource::None;
                           else throw ConfigError("feedback: expected interactive, oracle or none");
                         }}},
      PH_STRING("oracle_rules", hitl.oracle_rules),
      {"query_wait_ms", Field{[](const ExperimentConfig& c) { return fmt_int(c.hitl.query_wait_ms); },
                              [](ExperimentConfig& c, const KeyValue& kv) {
                                c.hitl.query_wait_ms = static_cast<int>(as_size(kv));
                              }}},
      PH_SIZE("services", fleet.services),
      PH_SIZE("hours", fleet.hours),
      PH_SIZE("min_vms", fleet.min_vms),
      PH_SIZE("max_vms", fleet.max_vms),
      {"node_cores", Field{[](const ExperimentConfig& c) { return fmt_int(c.fleet.node_cores); },
                           [](ExperimentConfig& c, const KeyValue& kv) {
                             c.fleet.node_cores = static_cast<int>(as_size(kv));
                           }}},
      PH_DOUBLE("node_memory_gb", fleet.node_memory_gb),
      PH_DOUBLE("memory_per_core_min_gb", fleet.memory_per_core_min_gb),
      PH_DOUBLE("memory_per_core_max_gb", fleet.memory_per_core_max_gb),
      PH_DOUBLE("node_headroom", fleet.node_headroom),
      PH_DOUBLE("usage_cap", fleet.usage_cap),
      PH_DOUBLE("hot_threshold", hot_threshold),
      PH_DOUBLE("pressure_threshold", pressure_threshold),
      PH_SIZE("airlines", airline.airlines),
      PH_SIZE("years", airline.years),
      {"first_year", Field{[](const ExperimentConfig& c) { return fmt_int(c.airline.first_year); },
                           [](ExperimentConfig& c, const KeyValue& kv) {
                             c.airline.first_year = static_cast<int>(parse_int(kv));
                           }}},
      PH_DOUBLE("max_margin", airline.max_margin),
      PH_DOUBLE("compensation", airline.compensation_unit),
      PH_DOUBLE("fare", airline.fare_unit),
      PH_BOOL("deterministic", airline.deterministic),
      PH_DOUBLE("train_fraction", train_fraction),
      PH_SIZE("bc_width", bc_width),
      PH_SIZE("ma_window", ma_window),
      PH_SIZE("grid_points", grid_points),
      {"sweep_k", Field{[](const ExperimentConfig& c) {
                          std::string s;
                          for (std::size_t i = 0; i < c.sweep_k.size(); ++i) s += (i ? "," : "") + std::to_string(c.sweep_k[i]);
                          return s;
                        },
                        [](ExperimentConfig& c, const KeyValue& kv) {
                          std::vector<std::size_t> ks;
                          std::stringstream ss(kv.value);
                          std::string item;
                          while (std::getline(ss, item, ',')) ks.push_back(as_size(KeyValue{kv.key, item, kv.line}));
                          if (ks.empty()) throw ConfigError("sweep_k: empty list");
                          c.sweep_k = ks;
                        }}},
      PH_STRING("output_dir", output_dir),
      PH_STRING("bind", bind_host),
      {"port", Field{[](const ExperimentConfig& c) { return fmt_int(c.port); },
                     [](ExperimentConfig& c, const KeyValue& kv) { c.port = static_cast<int>(parse_int(kv)); }}},
  };
  return table;
}

#undef PH_DOUBLE
#undef PH_SIZE
#undef PH_BOOL
#undef PH_STRING

const Field& field(const std::string& key) {
  for (const auto& [name, f] : fields())
    if (name == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string normalize_key(std::string key) {
  for (char& ch : key) {
    if (ch == '-') ch = '_';
    else ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return key;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

std::string to_string(FeedbackSource s) {
  switch (s) {
    case FeedbackSource::Interactive: return "interactive";
    case FeedbackSource::Oracle: return "oracle";
    case FeedbackSource::None: return "none";
  }
  return "?";
}

QueryConfig ExperimentConfig::query_config() const {
  QueryConfig q;
  q.u_p = hitl.u_p;
  q.u_a = hitl.u_a;
  q.top_n = hitl.top_n;
  q.merge_percentile = hitl.merge_percentile;
  q.max_action_queries = hitl.max_action_queries;
  q.risk_side = risk_side();
  return q;
}

void ExperimentConfig::validate() const {
  try {
    weights.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(hidden >= 1, "hidden must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(prototypes() >= 1, "k must be >= 1");
  require(hitl.frequency >= 1, "frequency must be >= 1");
  require(hitl.u_p >= 0.0 && hitl.u_p <= 1.0, "u_p must be in [0,1]");
  require(hitl.u_a >= 0.0 && hitl.u_a <= 1.0, "u_a must be in [0,1]");
  require(hitl.merge_percentile >= 0.0 && hitl.merge_percentile <= 1.0, "merge_percentile must be in [0,1]");
  require(fleet.services >= 1, "services must be >= 1");
  require(fleet.hours >= 1, "hours must be >= 1");
  require(fleet.min_vms >= 1 && fleet.max_vms >= fleet.min_vms, "need 1 <= min_vms <= max_vms");
  require(fleet.node_cores >= 1, "node_cores must be >= 1");
  require(fleet.memory_per_core_min_gb > 0 && fleet.memory_per_core_max_gb >= fleet.memory_per_core_min_gb,
          "memory_per_core range is empty");
  require(fleet.usage_cap > 0.0 && fleet.usage_cap <= 1.0, "usage_cap must be in (0,1]");
  require(hot_threshold > 0.0 && hot_threshold <= 1.0, "hot_threshold must be in (0,1]");
  require(pressure_threshold > 0.0 && pressure_threshold <= 1.0, "pressure_threshold must be in (0,1]");
  require(airline.airlines >= 1, "airlines must be >= 1");
  require(airline.years >= 1, "years must be >= 1");
  require(airline.max_margin > 0.0, "max_margin must be positive");
  require(train_fraction > 0.0 && train_fraction <= 1.0, "train_fraction must be in (0,1]");
  require(bc_width >= 1, "bc_width must be >= 1");
  require(grid_points >= 2, "grid_points must be >= 2");
  for (std::size_t kk : sweep_k) require(kk >= 1, "sweep_k entries must be >= 1");
  require(port >= 0 && port <= 65535, "port out of range");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.first);
    return out;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const std::string k = normalize_key(key);
  field(k).set(cfg, KeyValue{k, value, 0});
}

std::string get_setting(const ExperimentConfig& cfg, const std::string& key) {
  return field(normalize_key(key)).get(cfg);
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  for (const KeyValue& kv : parse_key_values(text)) {
    try {
      field(kv.key).set(base, kv);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(cfg) + "\n";
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : format_config(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace protohail
