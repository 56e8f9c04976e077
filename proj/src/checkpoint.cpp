#include "protohail/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "protohail/config.hpp"
#include "protohail/kvconfig.hpp"

namespace protohail {

using nlohmann::json;

json to_json(const Tensor& t) {
  return json{{"rows", t.rows()}, {"cols", t.cols()}, {"data", t.data()}};
}

Tensor tensor_from_json(const json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) {
    throw ConfigError("tensor: " + std::to_string(data.size()) + " values for shape " + std::to_string(rows) +
                      "x" + std::to_string(cols));
  }
  return Tensor(rows, cols, std::move(data));
}

namespace {

json encoder_json(const EncoderParams& e) {
  return json{{"state_width", e.state_width},
              {"hidden", e.hidden},
              {"normalizer", {{"mean", e.normalizer.mean}, {"scale", e.normalizer.scale}}},
              {"w_input", to_json(e.w_input)},
              {"b_input", to_json(e.b_input)},
              {"w_hidden_zr", to_json(e.w_hidden_zr)},
              {"w_hidden_n", to_json(e.w_hidden_n)}};
}

EncoderParams encoder_from(const json& j) {
  EncoderParams e;
  e.state_width = j.at("state_width").get<std::size_t>();
  e.hidden = j.at("hidden").get<std::size_t>();
  e.normalizer.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
  e.normalizer.scale = j.at("normalizer").at("scale").get<std::vector<double>>();
  e.w_input = tensor_from_json(j.at("w_input"));
  e.b_input = tensor_from_json(j.at("b_input"));
  e.w_hidden_zr = tensor_from_json(j.at("w_hidden_zr"));
  e.w_hidden_n = tensor_from_json(j.at("w_hidden_n"));
  const std::size_t m = e.hidden;
  if (e.normalizer.width() != e.state_width || e.normalizer.scale.size() != e.state_width ||
      e.w_input.rows() != e.input_width() || e.w_input.cols() != 3 * m || e.b_input.cols() != 3 * m ||
      e.w_hidden_zr.rows() != m || e.w_hidden_zr.cols() != 2 * m || e.w_hidden_n.rows() != m ||
      e.w_hidden_n.cols() != m) {
    throw ConfigError("encoder: inconsistent shapes");
  }
  return e;
}

const char* imitation_name(ImitationLoss l) { return l == ImitationLoss::CrossEntropy ? "ce" : "se"; }

ImitationLoss imitation_from(const std::string& s) {
  if (s == "ce") return ImitationLoss::CrossEntropy;
  if (s == "se") return ImitationLoss::SquaredError;
  throw ConfigError("unknown imitation loss '" + s + "'");
}

json ledger_json(const FeedbackLedger& l) {
  json proto = json::array(), pair = json::array(), action = json::array();
  for (const auto& [k, v] : l.prototype_votes()) proto.push_back({k, v});
  for (const auto& [ij, v] : l.pair_votes()) pair.push_back({ij.first, ij.second, v});
  for (const auto& [b, v] : l.action_votes()) action.push_back({b.prototype, b.decile, v});
  json j{{"prototypes", proto}, {"pairs", pair}, {"actions", action}};
  j["last_seq"] = l.last_sequence() ? json(*l.last_sequence()) : json(nullptr);
  return j;
}

FeedbackLedger ledger_from(const json& j) {
  std::map<std::size_t, int> proto;
  std::map<std::pair<std::size_t, std::size_t>, int> pair;
  std::map<ActionBucket, int> action;
  for (const json& e : j.at("prototypes")) proto[e.at(0).get<std::size_t>()] = e.at(1).get<int>();
  for (const json& e : j.at("pairs")) pair[{e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()}] = e.at(2).get<int>();
  for (const json& e : j.at("actions"))
    action[ActionBucket{e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()}] = e.at(2).get<int>();
  std::optional<std::uint64_t> last;
  if (!j.at("last_seq").is_null()) last = j.at("last_seq").get<std::uint64_t>();
  FeedbackLedger l;
  l.restore(std::move(proto), std::move(pair), std::move(action), last);
  return l;
}

json tensors_json(const std::vector<Tensor>& ts) {
  json a = json::array();
  for (const Tensor& t : ts) a.push_back(to_json(t));
  return a;
}

std::vector<Tensor> tensors_from(const json& j) {
  std::vector<Tensor> out;
  for (const json& e : j) out.push_back(tensor_from_json(e));
  return out;
}

}  // namespace

json to_json(const Checkpoint& c) {
  json j;
  j["format_version"] = c.format_version;
  j["kind"] = c.kind;
  j["config_text"] = c.config_text;
  j["config_hash"] = hex(c.config_hash);
  if (c.model) {
    const PolicyModel& m = *c.model;
    j["model"] = {{"encoder", encoder_json(m.encoder)},
                  {"prototypes", to_json(m.protos.embeddings)},
                  {"nearest_expert", m.protos.nearest_expert},
                  {"members", m.protos.members},
                  {"head_weights", to_json(m.head.weights)},
                  {"head_bias", to_json(m.head.bias)},
                  {"imitation", imitation_name(m.imitation)}};
  }
  if (c.bc) {
    const BcModel& b = *c.bc;
    j["bc"] = {{"encoder", encoder_json(b.encoder)}, {"w1", to_json(b.w1)}, {"b1", to_json(b.b1)},
               {"w2", to_json(b.w2)},                {"b2", to_json(b.b2)}, {"imitation", imitation_name(b.imitation)}};
  }
  j["ledger"] = ledger_json(c.ledger);
  j["shadow"] = {{"per_edit", c.shadow.per_edit}, {"edits", c.shadow.edits}, {"remaining", c.shadow.remaining}};
  if (c.optimizer) {
    const OptimizerState& o = *c.optimizer;
    j["optimizer"] = {{"learning_rate", o.config.learning_rate},
                      {"beta1", o.config.beta1},
                      {"beta2", o.config.beta2},
                      {"epsilon", o.config.epsilon},
                      {"step", o.step},
                      {"first_moment", tensors_json(o.first_moment)},
                      {"second_moment", tensors_json(o.second_moment)}};
  }
  j["iteration"] = c.iteration;
  j["queries"] = c.queries;
  j["rng_state"] = c.rng_state;
  j["diagnostic"] = c.diagnostic;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    Checkpoint c;
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != kCheckpointFormatVersion) {
      throw ConfigError("unsupported checkpoint format_version " + std::to_string(c.format_version));
    }
    c.kind = j.at("kind").get<std::string>();
    c.config_text = j.at("config_text").get<std::string>();
    c.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    if (j.contains("model")) {
      const json& m = j.at("model");
      PolicyModel pm;
      pm.encoder = encoder_from(m.at("encoder"));
      pm.protos.embeddings = tensor_from_json(m.at("prototypes"));
      pm.protos.nearest_expert = m.at("nearest_expert").get<std::vector<std::size_t>>();
      pm.protos.members = m.at("members").get<std::vector<std::vector<std::size_t>>>();
      pm.head.weights = tensor_from_json(m.at("head_weights"));
      pm.head.bias = tensor_from_json(m.at("head_bias"));
      pm.imitation = imitation_from(m.at("imitation").get<std::string>());
      try {
        pm.validate();
      } catch (const ContractViolation& e) {
        throw ConfigError(std::string("checkpoint model: ") + e.what());
      }
      c.model = std::move(pm);
    }
    if (j.contains("bc")) {
      const json& b = j.at("bc");
      BcModel bm;
      bm.encoder = encoder_from(b.at("encoder"));
      bm.w1 = tensor_from_json(b.at("w1"));
      bm.b1 = tensor_from_json(b.at("b1"));
      bm.w2 = tensor_from_json(b.at("w2"));
      bm.b2 = tensor_from_json(b.at("b2"));
      bm.imitation = imitation_from(b.at("imitation").get<std::string>());
      if (bm.w1.rows() != bm.encoder.hidden || bm.b1.cols() != bm.w1.cols() || bm.w2.rows() != bm.w1.cols() ||
          bm.w2.cols() != 1 || bm.b2.size() != 1) {
        throw ConfigError("checkpoint bc: inconsistent shapes");
      }
      c.bc = std::move(bm);
    }
    if (c.kind == "protohail" && !c.model) throw ConfigError("checkpoint of kind protohail has no model");
    if (c.kind == "bc" && !c.bc) throw ConfigError("checkpoint of kind bc has no bc model");
    if (c.kind != "protohail" && c.kind != "bc") throw ConfigError("unknown checkpoint kind '" + c.kind + "'");

    c.ledger = ledger_from(j.at("ledger"));
    const json& s = j.at("shadow");
    c.shadow.per_edit = s.at("per_edit").get<std::size_t>();
    c.shadow.edits = s.at("edits").get<std::size_t>();
    c.shadow.remaining = s.at("remaining").get<std::size_t>();
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      OptimizerState st;
      st.config = AdamConfig{o.at("learning_rate").get<double>(), o.at("beta1").get<double>(),
                             o.at("beta2").get<double>(), o.at("epsilon").get<double>()};
      st.step = o.at("step").get<std::uint64_t>();
      st.first_moment = tensors_from(o.at("first_moment"));
      st.second_moment = tensors_from(o.at("second_moment"));
      c.optimizer = std::move(st);
    }
    c.iteration = j.at("iteration").get<std::uint64_t>();
    c.queries = j.at("queries").get<std::size_t>();
    c.rng_state = j.at("rng_state").get<std::string>();
    c.diagnostic = j.at("diagnostic").get<std::string>();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("malformed checkpoint: bad config_hash");
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write checkpoint " + path);
  f << to_json(c).dump(1) << '\n';
  if (!f) throw ConfigError("error writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace protohail
