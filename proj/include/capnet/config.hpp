#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "capnet/coarsen.hpp"
#include "capnet/csv.hpp"
#include "capnet/errors.hpp"
#include "capnet/graph.hpp"

namespace capnet {

/// Everything the pipeline commands need, resolved before any stage runs.
/// Values come from defaults, then an optional key=value config file, then
/// command-line flags (flags win).
struct RunConfig {
  std::uint64_t master_seed = 42;
  std::filesystem::path out = "out";
  int n_runs = 12;
  int years = 30;
  int n_block_groups = 60;
  std::string topology = "complete";  // complete | custom
  std::string edges;                  // "urban-suburban,urban-rural" when custom
  double zone_d1 = kDefaultZoneD1;
  double zone_d2 = kDefaultZoneD2;
  std::string income_mode = "auto";  // auto (per-run tertiles) | fixed
  double income_i1 = kDefaultIncomeI1;
  double income_i2 = kDefaultIncomeI2;
  double people_per_agent = kDefaultPeoplePerAgent;
  double dt = 1.0;
  bool beta_literal = false;
  double learning_rate = 0.01;
  int patience = 100;
  int max_epochs = 20000;
  int checkpoint_every = 1000;
  SplitFractions splits;
  double mape_floor = 1000.0;  // people
  bool force = false;
  int jobs = 0;  // 0 = all hardware threads

  void validate() const {
    if (n_runs < 1) throw ConfigError("n_runs must be positive");
    if (years < 1) throw ConfigError("years must be positive");
    if (n_block_groups < 1) throw ConfigError("n_block_groups must be positive");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(zone_d1 < zone_d2)) throw ConfigError("zone thresholds must be strictly increasing");
    if (income_mode != "auto" && income_mode != "fixed") {
      throw ConfigError("income_mode must be 'auto' or 'fixed'");
    }
    if (income_mode == "fixed" && !(income_i1 < income_i2)) {
      throw ConfigError("income thresholds must be strictly increasing");
    }
    if (!(people_per_agent > 0.0)) throw ConfigError("people_per_agent must be positive");
    if (topology != "complete" && topology != "custom") {
      throw ConfigError("topology must be 'complete' or 'custom'");
    }
    if (topology == "custom" && edges.empty()) {
      throw ConfigError("custom topology needs an 'edges' list");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (patience < 0) throw ConfigError("patience must be nonnegative");
    if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
    if (mape_floor < 0.0) throw ConfigError("mape_floor must be nonnegative");
    if (jobs < 0) throw ConfigError("jobs must be nonnegative");
    splits.validate();
  }

  AggregationRules rules() const {
    AggregationRules r;
    r.zone_d1 = zone_d1;
    r.zone_d2 = zone_d2;
    r.income_i1 = income_i1;
    r.income_i2 = income_i2;
    r.people_per_agent = people_per_agent;
    return r;
  }
};

/// Case-study graph per the configured topology.
inline RegionGraph build_graph(const RunConfig& cfg) {
  std::vector<std::string> labels(kCaseStudyLabels.begin(), kCaseStudyLabels.end());
  if (cfg.topology == "complete") return build_region_graph(std::move(labels));
  std::vector<std::pair<std::string, std::string>> edge_list;
  for (auto part : split(cfg.edges, ',')) {
    const auto t = trim(part);
    if (t.empty()) continue;
    const std::size_t dash = t.find('-');
    if (dash == std::string_view::npos) {
      throw ConfigError("edge '" + std::string(t) + "' must be 'labelA-labelB'");
    }
    edge_list.emplace_back(std::string(trim(t.substr(0, dash))),
                           std::string(trim(t.substr(dash + 1))));
  }
  if (edge_list.empty()) throw ConfigError("custom topology needs at least one edge");
  return build_region_graph(std::move(labels), edge_list);
}

/// Applies one key=value assignment. Unknown keys are configuration errors.
inline void apply_config_entry(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto as_int = [&](std::string_view what) {
    return static_cast<int>(parse_int(value, what));
  };
  const auto as_double = [&](std::string_view what) { return parse_double(value, what); };
  const auto as_bool = [&](std::string_view what) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError(std::string(what) + " must be true/false");
  };
  try {
    if (key == "master_seed") {
      cfg.master_seed = parse_uint(value, key);
    } else if (key == "out") {
      cfg.out = std::string(value);
    } else if (key == "n_runs") {
      cfg.n_runs = as_int(key);
    } else if (key == "years") {
      cfg.years = as_int(key);
    } else if (key == "n_block_groups") {
      cfg.n_block_groups = as_int(key);
    } else if (key == "topology") {
      cfg.topology = std::string(value);
    } else if (key == "edges") {
      cfg.edges = std::string(value);
    } else if (key == "zone_d1") {
      cfg.zone_d1 = as_double(key);
    } else if (key == "zone_d2") {
      cfg.zone_d2 = as_double(key);
    } else if (key == "income_mode") {
      cfg.income_mode = std::string(value);
    } else if (key == "income_i1") {
      cfg.income_i1 = as_double(key);
    } else if (key == "income_i2") {
      cfg.income_i2 = as_double(key);
    } else if (key == "people_per_agent") {
      cfg.people_per_agent = as_double(key);
    } else if (key == "dt") {
      cfg.dt = as_double(key);
    } else if (key == "beta_literal") {
      cfg.beta_literal = as_bool(key);
    } else if (key == "learning_rate") {
      cfg.learning_rate = as_double(key);
    } else if (key == "patience") {
      cfg.patience = as_int(key);
    } else if (key == "max_epochs") {
      cfg.max_epochs = as_int(key);
    } else if (key == "checkpoint_every") {
      cfg.checkpoint_every = as_int(key);
    } else if (key == "train_frac") {
      cfg.splits.train = as_double(key);
    } else if (key == "val_frac") {
      cfg.splits.val = as_double(key);
    } else if (key == "test_frac") {
      cfg.splits.test = as_double(key);
    } else if (key == "mape_floor") {
      cfg.mape_floor = as_double(key);
    } else if (key == "jobs") {
      cfg.jobs = as_int(key);
    } else {
      throw ConfigError("unknown config key '" + std::string(key) + "'");
    }
  } catch (const IoError& e) {
    throw ConfigError(std::string("bad value for '") + std::string(key) + "': " + e.what());
  }
}

/// key=value per line; blank lines and '#' comments allowed.
inline void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::size_t start = 0;
  int line_no = 0;
  while (start < text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string::npos) pos = text.size();
    auto line = trim(std::string_view(text).substr(start, pos - start));
    start = pos + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": expected key=value");
    }
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

}  // namespace capnet
