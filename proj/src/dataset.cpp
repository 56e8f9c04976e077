#include "protohail/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "json.hpp"

namespace protohail {

using nlohmann::json;

DomainData generate_domain(const ExperimentConfig& cfg) {
  DomainData d;
  d.domain = cfg.domain;
  if (cfg.domain == Domain::Cloud) {
    d.fleet = cloud::generate_fleet(cfg.seed, cfg.fleet);
    d.trajectories = cloud::expert_trajectories(*d.fleet);
  } else {
    d.history = airline::generate_history(cfg.seed, cfg.airline);
    d.trajectories = airline::expert_trajectories(*d.history);
  }
  return d;
}

DataSplit split_by_entity(std::span<const Trajectory> data, double train_fraction, std::uint64_t seed) {
  if (data.empty()) throw ContractViolation("split_by_entity: empty dataset");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ContractViolation("split_by_entity: fraction");
  std::vector<std::string> ids;
  for (const Trajectory& t : data) ids.push_back(t.entity_id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ContractViolation("split_by_entity: duplicate entity id");
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(ids.size()))));
  ids.resize(n_train);
  std::sort(ids.begin(), ids.end());

  DataSplit s;
  for (const Trajectory& t : data) {
    if (std::binary_search(ids.begin(), ids.end(), t.entity_id)) s.train.push_back(t);
    else s.test.push_back(t);
  }
  return s;
}

void write_jsonl(std::ostream& out, std::span<const Trajectory> data) {
  for (const Trajectory& tr : data) {
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      json rec;
      rec["entity_id"] = tr.entity_id;
      rec["t"] = t;
      rec["state"] = tr.steps[t].state;
      rec["action"] = tr.steps[t].action ? json(*tr.steps[t].action) : json(nullptr);
      rec["domain_tag"] = to_string(tr.domain);
      out << rec.dump() << '\n';
    }
  }
}

std::vector<Trajectory> read_jsonl(std::istream& in) {
  std::vector<Trajectory> out;
  std::map<std::string, std::size_t> index;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      return ConfigError("dataset line " + std::to_string(lineno) + ": " + why);
    };
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw fail(e.what());
    }
    try {
      const std::string id = rec.at("entity_id").get<std::string>();
      const auto t = rec.at("t").get<std::size_t>();
      Step step;
      step.state = rec.at("state").get<std::vector<double>>();
      if (!rec.at("action").is_null()) step.action = rec.at("action").get<double>();
      const Domain domain = domain_from_string(rec.at("domain_tag").get<std::string>());

      auto [it, fresh] = index.emplace(id, out.size());
      if (fresh) {
        out.push_back(Trajectory{id, {}, domain});
      }
      Trajectory& tr = out[it->second];
      if (tr.domain != domain) throw fail("entity " + id + " changes domain_tag");
      if (t != tr.steps.size()) {
        throw fail("entity " + id + " expected t=" + std::to_string(tr.steps.size()) + ", got " + std::to_string(t));
      }
      tr.steps.push_back(std::move(step));
    } catch (const json::exception& e) {
      throw fail(e.what());
    }
  }
  if (!out.empty()) {
    const Domain d = out.front().domain;
    for (const Trajectory& tr : out) {
      if (tr.domain != d) throw ConfigError("dataset mixes domain tags");
      try {
        tr.validate();
      } catch (const ContractViolation& e) {
        throw ConfigError(std::string("dataset: ") + e.what());
      }
    }
  }
  return out;
}

void save_dataset(const std::string& path, std::span<const Trajectory> data) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write dataset " + path);
  f.precision(17);
  write_jsonl(f, data);
  if (!f) throw ConfigError("error writing dataset " + path);
}

std::vector<Trajectory> load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read dataset " + path);
  return read_jsonl(f);
}

}  // namespace protohail
