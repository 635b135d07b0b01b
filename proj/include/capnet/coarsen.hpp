#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "capnet/abm.hpp"
#include "capnet/csv.hpp"
#include "capnet/errors.hpp"
#include "capnet/graph.hpp"
#include "capnet/rng.hpp"

namespace capnet {

inline constexpr int kZoneUrban = 0;
inline constexpr int kZoneSuburban = 1;
inline constexpr int kZoneRural = 2;

/// Case-study defaults: distance cutoffs for urban/suburban/rural and income
/// tertile cutoffs in dollars/year.
inline constexpr double kDefaultZoneD1 = 0.126;
inline constexpr double kDefaultZoneD2 = 0.355;
inline constexpr double kDefaultIncomeI1 = 26500.0;
inline constexpr double kDefaultIncomeI2 = 36700.0;
inline constexpr double kDefaultPeoplePerAgent = 100.0;

struct AggregationRules {
  double zone_d1 = kDefaultZoneD1;
  double zone_d2 = kDefaultZoneD2;
  double income_i1 = kDefaultIncomeI1;
  double income_i2 = kDefaultIncomeI2;
  double people_per_agent = kDefaultPeoplePerAgent;

  void validate() const {
    if (!(zone_d1 < zone_d2)) throw ConfigError("zone thresholds must be strictly increasing");
    if (!(income_i1 < income_i2)) {
      throw ConfigError("income thresholds must be strictly increasing");
    }
    if (!(people_per_agent > 0.0)) throw ConfigError("people_per_agent must be positive");
  }
};

/// urban if d <= d1, suburban if d1 < d <= d2, rural otherwise. Boundaries
/// are inclusive on the lower class.
inline int classify_zone(double d, const AggregationRules& rules) {
  if (d <= rules.zone_d1) return kZoneUrban;
  if (d <= rules.zone_d2) return kZoneSuburban;
  return kZoneRural;
}

/// low if I <= I1, middle if I1 < I <= I2, high otherwise.
inline int classify_income(double income, const AggregationRules& rules) {
  if (income <= rules.income_i1) return 0;
  if (income <= rules.income_i2) return 1;
  return 2;
}

/// Empirical 1/3 and 2/3 quantiles with linear interpolation.
inline std::pair<double, double> compute_income_thresholds(std::vector<double> incomes) {
  if (incomes.size() < 3) throw ConfigError("need at least 3 incomes for tertiles");
  std::sort(incomes.begin(), incomes.end());
  const auto quantile = [&](double p) {
    const double h = p * static_cast<double>(incomes.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, incomes.size() - 1);
    return incomes[lo] + (h - std::floor(h)) * (incomes[hi] - incomes[lo]);
  };
  const double i1 = quantile(1.0 / 3.0);
  const double i2 = quantile(2.0 / 3.0);
  if (!(i1 < i2)) throw ConfigError("degenerate income distribution: tertiles coincide");
  return {i1, i2};
}

/// Zone index per block group id, from one year's block snapshots.
inline std::vector<int> zone_by_block(const std::vector<BlockSnap>& blocks,
                                      const AggregationRules& rules) {
  int max_id = -1;
  for (const auto& b : blocks) max_id = std::max(max_id, b.id);
  std::vector<int> zone(max_id + 1, kZoneRural);
  for (const auto& b : blocks) zone[b.id] = classify_zone(b.distance_d, rules);
  return zone;
}

/// People counts per (node, subpop) for one year: housed agents land in their
/// block group's zone, outmigrated agents in the outmigrated node, each
/// contributing people_per_agent people.
inline SystemState aggregate_snapshot(const std::vector<AgentSnap>& agents,
                                      const std::vector<BlockSnap>& blocks,
                                      const AggregationRules& rules) {
  rules.validate();
  const std::vector<int> zone = zone_by_block(blocks, rules);
  SystemState counts(kCaseStudyLabels.size(), NodeVec{0.0, 0.0, 0.0});
  for (const auto& a : agents) {
    int node;
    if (a.location == kOutmigratedLocation) {
      node = kOutmigratedNode;
    } else if (a.location >= 0 && a.location < static_cast<int>(zone.size())) {
      node = zone[a.location];
    } else {
      throw ConfigError("agent references unknown block group " + std::to_string(a.location));
    }
    counts[node][classify_income(a.income, rules)] += rules.people_per_agent;
  }
  return counts;
}

/// Coarse view of one run: states per year, inmigration growth per step, and
/// per-node capacity per year.
struct CoarseTrajectory {
  int run_id = 0;
  std::vector<SystemState> states;            // years+1
  std::vector<SystemState> growth;            // years
  std::vector<std::vector<double>> capacity;  // years+1

  int years() const { return static_cast<int>(growth.size()); }
  int n_nodes() const { return states.empty() ? 0 : static_cast<int>(states[0].size()); }

  /// Driver series for an N-step rollout (N = years): growth per step and the
  /// capacity at the start of each step.
  ExogenousSeries exogenous() const {
    ExogenousSeries exo;
    exo.growth = growth;
    exo.capacity.assign(capacity.begin(), capacity.begin() + growth.size());
    return exo;
  }
};

/// Project one run: aggregate every snapshot, attribute each new agent's
/// growth to its first-housed node (outmigrated if never housed), and sum
/// zone supply into capacities. The outmigrated node's capacity is pinned to
/// the year-0 total of the real zones.
inline CoarseTrajectory build_coarse_trajectory(const AgentTrajectory& run,
                                                const AggregationRules& rules) {
  rules.validate();
  const int years = run.years();
  if (years < 0) throw ConfigError("trajectory has no snapshots");
  CoarseTrajectory out;
  out.run_id = run.run_id;
  out.states.reserve(years + 1);
  out.capacity.reserve(years + 1);
  for (int y = 0; y <= years; ++y) {
    out.states.push_back(aggregate_snapshot(run.agents[y], run.blocks[y], rules));
    const std::vector<int> zone = zone_by_block(run.blocks[y], rules);
    std::vector<double> C(kCaseStudyLabels.size(), 0.0);
    for (const auto& b : run.blocks[y]) {
      C[zone[b.id]] += static_cast<double>(b.supply) * rules.people_per_agent;
    }
    // A zone that happens to contain no block groups keeps one notional
    // dwelling of capacity: occupancy pressure stays defined and the node
    // simply carries a constant zero count.
    for (int z = kZoneUrban; z <= kZoneRural; ++z) {
      if (C[z] == 0.0) C[z] = rules.people_per_agent;
    }
    out.capacity.push_back(std::move(C));
  }
  const double c3 = out.capacity[0][kZoneUrban] + out.capacity[0][kZoneSuburban] +
                    out.capacity[0][kZoneRural];
  if (!(c3 > 0.0)) throw ConfigError("run has zero total capacity");
  for (auto& C : out.capacity) C[kOutmigratedNode] = c3;

  out.growth.assign(years, SystemState(kCaseStudyLabels.size(), NodeVec{0.0, 0.0, 0.0}));
  for (int y = 1; y <= years; ++y) {
    const std::vector<int> zone = zone_by_block(run.blocks[y], rules);
    std::vector<char> existed;
    for (const auto& a : run.agents[y - 1]) {
      if (a.id >= static_cast<int>(existed.size())) existed.resize(a.id + 1, 0);
      existed[a.id] = 1;
    }
    for (const auto& a : run.agents[y]) {
      if (a.id < static_cast<int>(existed.size()) && existed[a.id]) continue;
      int node;
      if (a.location == kOutmigratedLocation) {
        node = kOutmigratedNode;
      } else if (a.location >= 0 && a.location < static_cast<int>(zone.size())) {
        node = zone[a.location];
      } else {
        throw ConfigError("new agent references unknown block group");
      }
      out.growth[y - 1][node][classify_income(a.income, rules)] += rules.people_per_agent;
    }
  }
  return out;
}

/// CSV form: header then one row per (year, node, subpop), year/node/subpop
/// ascending. G is the growth applied during [year, year+1); the final year
/// carries G=0. C repeats per subpop row.
inline std::string coarse_csv(const CoarseTrajectory& traj) {
  std::string out = "year,node,subpop,count,G,C\n";
  const int years = traj.years();
  for (int y = 0; y <= years; ++y) {
    for (int node = 0; node < traj.n_nodes(); ++node) {
      for (int s = 0; s < kSubpops; ++s) {
        out += std::to_string(y);
        out += ',';
        out += std::to_string(node);
        out += ',';
        out += std::to_string(s);
        out += ',';
        out += format_double(traj.states[y][node][s]);
        out += ',';
        out += format_double(y < years ? traj.growth[y][node][s] : 0.0);
        out += ',';
        out += format_double(traj.capacity[y][node]);
        out += '\n';
      }
    }
  }
  return out;
}

inline CoarseTrajectory parse_coarse_csv(const std::string& text, int run_id) {
  struct Row {
    int year, node, subpop;
    double count, g, c;
  };
  std::vector<Row> rows;
  int max_year = -1;
  int max_node = -1;
  std::size_t start = 0;
  bool header = true;
  int line_no = 0;
  while (start < text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string::npos) pos = text.size();
    const auto line = trim(std::string_view(text).substr(start, pos - start));
    start = pos + 1;
    ++line_no;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 6) {
      throw IoError("coarse csv line " + std::to_string(line_no) + ": expected 6 fields");
    }
    Row r;
    r.year = static_cast<int>(parse_int(trim(f[0]), "coarse csv"));
    r.node = static_cast<int>(parse_int(trim(f[1]), "coarse csv"));
    r.subpop = static_cast<int>(parse_int(trim(f[2]), "coarse csv"));
    r.count = parse_double(trim(f[3]), "coarse csv");
    r.g = parse_double(trim(f[4]), "coarse csv");
    r.c = parse_double(trim(f[5]), "coarse csv");
    if (r.year < 0 || r.node < 0 || r.subpop < 0 || r.subpop >= kSubpops) {
      throw IoError("coarse csv line " + std::to_string(line_no) + ": index out of range");
    }
    max_year = std::max(max_year, r.year);
    max_node = std::max(max_node, r.node);
    rows.push_back(r);
  }
  if (rows.empty()) throw IoError("coarse csv has no data rows");
  const int n_nodes = max_node + 1;
  const int years = max_year;
  CoarseTrajectory traj;
  traj.run_id = run_id;
  traj.states.assign(years + 1, SystemState(n_nodes, NodeVec{0.0, 0.0, 0.0}));
  traj.growth.assign(years, SystemState(n_nodes, NodeVec{0.0, 0.0, 0.0}));
  traj.capacity.assign(years + 1, std::vector<double>(n_nodes, 0.0));
  std::vector<char> seen(static_cast<std::size_t>(years + 1) * n_nodes * kSubpops, 0);
  for (const auto& r : rows) {
    const std::size_t key =
        (static_cast<std::size_t>(r.year) * n_nodes + r.node) * kSubpops + r.subpop;
    if (seen[key]) throw IoError("coarse csv: duplicate (year,node,subpop) row");
    seen[key] = 1;
    traj.states[r.year][r.node][r.subpop] = r.count;
    if (r.year < years) {
      traj.growth[r.year][r.node][r.subpop] = r.g;
    } else if (r.g != 0.0) {
      throw IoError("coarse csv: final year must carry G=0");
    }
    traj.capacity[r.year][r.node] = r.c;
  }
  for (char s : seen) {
    if (!s) throw IoError("coarse csv: missing (year,node,subpop) rows");
  }
  for (const auto& C : traj.capacity) {
    for (double c : C) {
      if (!(c > 0.0)) throw IoError("coarse csv: capacities must be positive");
    }
  }
  return traj;
}

struct SplitIndices {
  std::vector<int> train, val, test;
};

struct SplitFractions {
  double train = 0.5;
  double val = 0.15;
  double test = 0.35;

  void validate() const {
    const auto frac = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!frac(train) || !frac(val) || !frac(test) ||
        std::abs(train + val + test - 1.0) > 1e-9) {
      throw ConfigError("split fractions must lie in [0,1] and sum to 1");
    }
  }
};

/// Deterministic shuffle, then cumulative rounded boundaries: |train| =
/// round(f_train*n), |train|+|val| = round((f_train+f_val)*n) with ties to
/// even, remainder to test. Splits may be empty for tiny n. Indices within
/// each split are ascending.
inline SplitIndices split_dataset(int n_runs, const SplitFractions& f, std::uint64_t seed) {
  f.validate();
  if (n_runs < 3) throw ConfigError("need at least 3 runs to split");
  std::vector<int> order(n_runs);
  for (int i = 0; i < n_runs; ++i) order[i] = i;
  Rng rng(seed);
  for (int i = n_runs - 1; i > 0; --i) {
    std::swap(order[i], order[rng.uniform_int(0, i)]);
  }
  const auto boundary = [&](double frac) {
    const int b = static_cast<int>(std::nearbyint(frac * n_runs));
    return std::clamp(b, 0, n_runs);
  };
  const int b1 = boundary(f.train);
  const int b2 = std::max(b1, boundary(f.train + f.val));
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + b1);
  s.val.assign(order.begin() + b1, order.begin() + b2);
  s.test.assign(order.begin() + b2, order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline std::vector<CoarseTrajectory> select_runs(const std::vector<CoarseTrajectory>& runs,
                                                 const std::vector<int>& indices) {
  std::vector<CoarseTrajectory> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(runs.at(i));
  return out;
}

}  // namespace capnet
