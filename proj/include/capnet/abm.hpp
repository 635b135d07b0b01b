#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capnet/csv.hpp"
#include "capnet/errors.hpp"
#include "capnet/rng.hpp"

namespace capnet {

/// location value for agents that left the region (absorbing).
inline constexpr int kOutmigratedLocation = -1;
/// Transient marker while an agent is searching within a year; never appears
/// in snapshots.
inline constexpr int kInMarketLocation = -2;

inline constexpr double kIncomeMedian = 31000.0;
inline constexpr double kIncomeLogSigma = 0.5;
inline constexpr double kInmigrantLogSigma = 0.35;
inline constexpr double kBudgetPerIncome = 3.0;
inline constexpr double kMoverFraction = 0.05;
inline constexpr double kFloodProneFraction = 0.15;
inline constexpr int kMaxCandidates = 10;
inline constexpr int kQuietYearsForPriceCut = 5;

/// Utility weights (quality, price headroom, proximity); sum to 1 so the
/// utility lives in [0, 1].
inline constexpr double kUtilityQualityWeight = 0.40;
inline constexpr double kUtilityPriceWeight = 0.35;
inline constexpr double kUtilityProximityWeight = 0.25;

struct BlockGroup {
  int id = 0;
  double distance_d = 0.0;  // normalized distance to the central business district
  double price = 0.0;
  double quality = 0.0;
  bool flood_prone = false;
  int supply = 0;
  int occupied = 0;
  int quiet_years = 0;  // consecutive years without excess demand
};

struct HouseholdAgent {
  int id = 0;
  double income = 0.0;
  double budget = 0.0;
  int location = kOutmigratedLocation;
  bool avoids_flood = false;
};

struct ScenarioParams {
  double initial_vacancy_rate = 0.1;
  double population_growth_rate = 0.01;
  double inmigrant_income_percentile = 0.5;
  double building_growth_rate = 0.01;
  double flood_avoider_fraction = 0.6;
  std::uint64_t seed = 0;

  void validate() const {
    const auto frac = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!frac(initial_vacancy_rate) || !frac(population_growth_rate) ||
        !frac(inmigrant_income_percentile) || !frac(building_growth_rate) ||
        !frac(flood_avoider_fraction)) {
      throw ConfigError("scenario fractions must lie in [0,1]");
    }
  }

  std::string serialize() const {
    std::string out;
    out += "initial_vacancy_rate=" + format_double(initial_vacancy_rate) + "\n";
    out += "population_growth_rate=" + format_double(population_growth_rate) + "\n";
    out += "inmigrant_income_percentile=" + format_double(inmigrant_income_percentile) + "\n";
    out += "building_growth_rate=" + format_double(building_growth_rate) + "\n";
    out += "flood_avoider_fraction=" + format_double(flood_avoider_fraction) + "\n";
    out += "seed=" + std::to_string(seed) + "\n";
    return out;
  }

  static ScenarioParams parse(const std::string& text) {
    ScenarioParams p;
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t pos = text.find('\n', start);
      if (pos == std::string::npos) pos = text.size();
      const auto line = trim(std::string_view(text).substr(start, pos - start));
      start = pos + 1;
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) throw IoError("scenario line missing '='");
      const auto key = trim(line.substr(0, eq));
      const auto value = trim(line.substr(eq + 1));
      if (key == "initial_vacancy_rate") {
        p.initial_vacancy_rate = parse_double(value, "scenario");
      } else if (key == "population_growth_rate") {
        p.population_growth_rate = parse_double(value, "scenario");
      } else if (key == "inmigrant_income_percentile") {
        p.inmigrant_income_percentile = parse_double(value, "scenario");
      } else if (key == "building_growth_rate") {
        p.building_growth_rate = parse_double(value, "scenario");
      } else if (key == "flood_avoider_fraction") {
        p.flood_avoider_fraction = parse_double(value, "scenario");
      } else if (key == "seed") {
        p.seed = parse_uint(value, "scenario");
      } else {
        throw IoError("unknown scenario key '" + std::string(key) + "'");
      }
    }
    p.validate();
    return p;
  }
};

/// Randomized exogenous factors for one run. Ranges are fixed here; the
/// per-run simulation seed is derived from (master_seed, run_index) on a
/// separate stream so either stage can be rerun in isolation.
inline ScenarioParams sample_scenario(std::uint64_t master_seed, int run_index) {
  Rng rng(derive_seed(master_seed, "scenario", static_cast<std::uint64_t>(run_index)));
  ScenarioParams p;
  p.initial_vacancy_rate = rng.uniform(0.05, 0.20);
  p.population_growth_rate = rng.uniform(0.00, 0.03);
  p.inmigrant_income_percentile = rng.uniform(0.2, 0.8);
  p.building_growth_rate = rng.uniform(0.00, 0.02);
  p.flood_avoider_fraction = 0.6;
  p.seed = derive_seed(master_seed, "abm", static_cast<std::uint64_t>(run_index));
  return p;
}

/// Perceived utility of a representative property; empty when the property is
/// out of budget or excluded by flood avoidance.
inline std::optional<double> agent_utility(const HouseholdAgent& agent, const BlockGroup& bg) {
  if (bg.price > agent.budget) return std::nullopt;
  if (agent.avoids_flood && bg.flood_prone) return std::nullopt;
  return kUtilityQualityWeight * bg.quality +
         kUtilityPriceWeight * (1.0 - bg.price / agent.budget) +
         kUtilityProximityWeight * (1.0 - bg.distance_d);
}

/// One market participant's ranked choices: (block group id, utility),
/// utility descending.
struct CandidateSet {
  int agent_id = 0;
  double income = 0.0;
  std::vector<std::pair<int, double>> ranked;
};

struct MatchResult {
  std::vector<std::pair<int, int>> assignments;  // (agent_id, bg_id), agent ascending
  std::vector<int> unmatched;                    // agent ids, ascending
};

/// Greedy matching: every (agent, candidate) claim is processed in priority
/// order utility desc, then income desc, then agent id desc; an agent takes
/// the first claim that still has a vacancy. availability is indexed by block
/// group id.
inline MatchResult match_market(const std::vector<CandidateSet>& candidates,
                                std::vector<int> availability) {
  struct Claim {
    double utility;
    double income;
    int agent_id;
    int bg;
  };
  std::vector<Claim> claims;
  for (const auto& c : candidates) {
    for (const auto& [bg, u] : c.ranked) claims.push_back({u, c.income, c.agent_id, bg});
  }
  std::sort(claims.begin(), claims.end(), [](const Claim& a, const Claim& b) {
    if (a.utility != b.utility) return a.utility > b.utility;
    if (a.income != b.income) return a.income > b.income;
    if (a.agent_id != b.agent_id) return a.agent_id > b.agent_id;
    return a.bg < b.bg;
  });
  MatchResult out;
  std::vector<char> assigned_flag;
  const auto mark = [&](int agent_id) {
    if (agent_id >= static_cast<int>(assigned_flag.size())) assigned_flag.resize(agent_id + 1, 0);
    assigned_flag[agent_id] = 1;
  };
  const auto is_assigned = [&](int agent_id) {
    return agent_id < static_cast<int>(assigned_flag.size()) && assigned_flag[agent_id];
  };
  for (const auto& cl : claims) {
    if (is_assigned(cl.agent_id)) continue;
    if (cl.bg < 0 || cl.bg >= static_cast<int>(availability.size())) {
      throw ConfigError("match_market: candidate references unknown block group");
    }
    if (availability[cl.bg] <= 0) continue;
    --availability[cl.bg];
    mark(cl.agent_id);
    out.assignments.emplace_back(cl.agent_id, cl.bg);
  }
  for (const auto& c : candidates) {
    if (!is_assigned(c.agent_id)) out.unmatched.push_back(c.agent_id);
  }
  std::sort(out.assignments.begin(), out.assignments.end());
  std::sort(out.unmatched.begin(), out.unmatched.end());
  return out;
}

struct World {
  std::vector<BlockGroup> bgs;
  std::vector<HouseholdAgent> agents;  // all agents ever created, id == index
  ScenarioParams scenario;
  int year = 0;
  long long initial_population = 0;
  long long cum_created = 0;
  long long cum_outmigrated = 0;

  long long housed_count() const {
    long long n = 0;
    for (const auto& a : agents) n += a.location >= 0;
    return n;
  }
};

/// Price grows with quality and proximity; the noise term keeps bgs within a
/// zone heterogeneous. The scale starts affordable against the income
/// distribution (budget = 3x income, median income ~31k): sustained excess
/// demand compounds prices upward until lower incomes are priced out, so
/// outmigration sets in gradually rather than at year zero.
inline double initial_price(double quality, double distance_d, double noise) {
  return 27000.0 + 75000.0 * (0.45 * quality + 0.35 * (1.0 - distance_d) + 0.20 * noise);
}

inline double base_income(Rng& rng) {
  return std::exp(std::log(kIncomeMedian) + kIncomeLogSigma * rng.normal());
}

/// Inmigrant cohort income: median pinned to the scenario's percentile of the
/// base distribution, tighter spread.
inline double inmigrant_income(Rng& rng, double percentile) {
  const double shift = kIncomeLogSigma * probit(percentile);
  return std::exp(std::log(kIncomeMedian) + shift + kInmigrantLogSigma * rng.normal());
}

inline World init_world(const ScenarioParams& params, int n_block_groups, Rng& rng) {
  if (n_block_groups < 1) throw ConfigError("need at least one block group");
  params.validate();
  World w;
  w.scenario = params;
  w.bgs.resize(n_block_groups);
  for (int b = 0; b < n_block_groups; ++b) {
    auto& bg = w.bgs[b];
    bg.id = b;
    bg.distance_d = rng.uniform01();
    bg.quality = rng.uniform01();
    bg.price = initial_price(bg.quality, bg.distance_d, rng.uniform01());
    bg.supply = rng.uniform_int(10, 30);
  }
  // Flood-prone band: the kFloodProneFraction of bgs closest to the center.
  std::vector<int> order(n_block_groups);
  for (int b = 0; b < n_block_groups; ++b) order[b] = b;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (w.bgs[a].distance_d != w.bgs[b].distance_d) {
      return w.bgs[a].distance_d < w.bgs[b].distance_d;
    }
    return a < b;
  });
  const int n_flood = static_cast<int>(std::lround(kFloodProneFraction * n_block_groups));
  for (int k = 0; k < n_flood; ++k) w.bgs[order[k]].flood_prone = true;

  for (auto& bg : w.bgs) {
    const int occupants = std::min(
        bg.supply,
        static_cast<int>(std::lround(bg.supply * (1.0 - params.initial_vacancy_rate))));
    for (int k = 0; k < occupants; ++k) {
      HouseholdAgent a;
      a.id = static_cast<int>(w.agents.size());
      a.income = base_income(rng);
      a.budget = kBudgetPerIncome * a.income;
      a.location = bg.id;
      // Residents of flood-prone bgs cannot be avoiders, or the invariant
      // "avoiders never occupy flood-prone bgs" would fail at year 0.
      a.avoids_flood = bg.flood_prone ? false : rng.bernoulli(params.flood_avoider_fraction);
      w.agents.push_back(a);
    }
    bg.occupied = occupants;
  }
  w.initial_population = static_cast<long long>(w.agents.size());
  return w;
}

/// Development response: bgs whose applications exceeded their open vacancies
/// expand and get pricier; bgs quiet for kQuietYearsForPriceCut consecutive
/// years cut price once and restart their counter. New construction from the
/// scenario's building growth lands on uniformly drawn bgs.
inline void developer_update(World& w, const std::vector<int>& demand,
                             const std::vector<int>& vacancies_before, Rng& rng) {
  for (auto& bg : w.bgs) {
    if (demand[bg.id] > vacancies_before[bg.id]) {
      bg.supply = static_cast<int>(std::ceil(bg.supply * 1.05));
      bg.price *= 1.05;
      bg.quiet_years = 0;
    } else {
      ++bg.quiet_years;
      if (bg.quiet_years >= kQuietYearsForPriceCut) {
        bg.price *= 0.95;
        bg.quiet_years = 0;
      }
    }
  }
  long long total_supply = 0;
  for (const auto& bg : w.bgs) total_supply += bg.supply;
  const long long new_units =
      std::llround(w.scenario.building_growth_rate * static_cast<double>(total_supply));
  for (long long k = 0; k < new_units; ++k) {
    ++w.bgs[rng.uniform_int(0, static_cast<int>(w.bgs.size()) - 1)].supply;
  }
}

/// One simulated year: inmigration, movers re-entering the market, candidate
/// search, matching, developer update, then outmigration of the unmatched.
inline void step_year(World& w, Rng& rng) {
  const int n_bgs = static_cast<int>(w.bgs.size());

  // 1. Inmigration.
  const long long housed_at_start = w.housed_count();
  const long long created =
      std::llround(w.scenario.population_growth_rate * static_cast<double>(housed_at_start));
  std::vector<int> market;
  for (long long k = 0; k < created; ++k) {
    HouseholdAgent a;
    a.id = static_cast<int>(w.agents.size());
    a.income = inmigrant_income(rng, w.scenario.inmigrant_income_percentile);
    a.budget = kBudgetPerIncome * a.income;
    a.location = kInMarketLocation;
    a.avoids_flood = rng.bernoulli(w.scenario.flood_avoider_fraction);
    w.agents.push_back(a);
    market.push_back(a.id);
  }
  w.cum_created += created;

  // 2. A fixed fraction of housed agents vacate and re-enter the market.
  const int pre_existing = static_cast<int>(w.agents.size() - market.size());
  for (int id = 0; id < pre_existing; ++id) {
    auto& a = w.agents[id];
    if (a.location < 0) continue;
    if (!rng.bernoulli(kMoverFraction)) continue;
    --w.bgs[a.location].occupied;
    a.location = kInMarketLocation;
    market.push_back(id);
  }
  std::sort(market.begin(), market.end());

  // 3. Search: up to kMaxCandidates distinct eligible bgs per agent, sampled
  // without replacement with probability proportional to open vacancies,
  // ranked by utility.
  std::vector<int> demand(n_bgs, 0);
  std::vector<int> vacancies(n_bgs, 0);
  for (const auto& bg : w.bgs) vacancies[bg.id] = bg.supply - bg.occupied;
  std::vector<CandidateSet> candidates;
  candidates.reserve(market.size());
  std::vector<double> weights(n_bgs);
  for (int id : market) {
    const auto& a = w.agents[id];
    CandidateSet cs;
    cs.agent_id = id;
    cs.income = a.income;
    double total = 0.0;
    std::vector<double> utilities(n_bgs, 0.0);
    for (int b = 0; b < n_bgs; ++b) {
      weights[b] = 0.0;
      if (vacancies[b] <= 0) continue;
      const auto u = agent_utility(a, w.bgs[b]);
      if (!u) continue;
      utilities[b] = *u;
      weights[b] = static_cast<double>(vacancies[b]);
      total += weights[b];
    }
    for (int pick = 0; pick < kMaxCandidates && total > 0.0; ++pick) {
      const int b = pick_weighted(rng, weights, total);
      if (b < 0) break;
      cs.ranked.emplace_back(b, utilities[b]);
      total -= weights[b];
      weights[b] = 0.0;
    }
    std::sort(cs.ranked.begin(), cs.ranked.end(),
              [](const std::pair<int, double>& x, const std::pair<int, double>& y) {
                if (x.second != y.second) return x.second > y.second;
                return x.first < y.first;
              });
    for (const auto& [b, u] : cs.ranked) ++demand[b];
    if (!cs.ranked.empty()) candidates.push_back(std::move(cs));
  }

  // 4. Matching.
  const MatchResult matched = match_market(candidates, vacancies);
  for (const auto& [agent_id, bg] : matched.assignments) {
    w.agents[agent_id].location = bg;
    ++w.bgs[bg].occupied;
  }

  // 5. Developer response uses pre-matching vacancies as the supply side.
  developer_update(w, demand, vacancies, rng);

  // 6. Whoever is still in the market leaves the region for good.
  for (int id : market) {
    auto& a = w.agents[id];
    if (a.location == kInMarketLocation) {
      a.location = kOutmigratedLocation;
      ++w.cum_outmigrated;
    }
  }
  ++w.year;
}

struct AgentSnap {
  int id = 0;
  double income = 0.0;
  int location = kOutmigratedLocation;
};

struct BlockSnap {
  int id = 0;
  double distance_d = 0.0;
  int supply = 0;
  double price = 0.0;
  int occupied = 0;
  bool flood_prone = false;
};

/// Year-by-year history of one run. Snapshot y lists every agent existing at
/// year y (ascending id) and every block group.
struct AgentTrajectory {
  int run_id = 0;
  ScenarioParams scenario;
  std::vector<std::vector<AgentSnap>> agents;  // years+1 snapshots
  std::vector<std::vector<BlockSnap>> blocks;  // years+1 snapshots

  int years() const { return static_cast<int>(agents.size()) - 1; }
};

inline void take_snapshot(const World& w, AgentTrajectory& traj) {
  std::vector<AgentSnap> as;
  as.reserve(w.agents.size());
  for (const auto& a : w.agents) as.push_back({a.id, a.income, a.location});
  std::vector<BlockSnap> bs;
  bs.reserve(w.bgs.size());
  for (const auto& b : w.bgs) {
    bs.push_back({b.id, b.distance_d, b.supply, b.price, b.occupied, b.flood_prone});
  }
  traj.agents.push_back(std::move(as));
  traj.blocks.push_back(std::move(bs));
}

inline AgentTrajectory run_simulation(const ScenarioParams& params, int years,
                                      int n_block_groups) {
  if (years < 0) throw ConfigError("years must be nonnegative");
  Rng rng(params.seed);
  World w = init_world(params, n_block_groups, rng);
  AgentTrajectory traj;
  traj.scenario = params;
  take_snapshot(w, traj);
  for (int y = 0; y < years; ++y) {
    step_year(w, rng);
    take_snapshot(w, traj);
  }
  return traj;
}

inline std::string agents_csv(const AgentTrajectory& traj) {
  std::string out = "year,agent_id,income,location\n";
  for (int y = 0; y < static_cast<int>(traj.agents.size()); ++y) {
    for (const auto& a : traj.agents[y]) {
      out += std::to_string(y);
      out += ',';
      out += std::to_string(a.id);
      out += ',';
      out += format_double(a.income);
      out += ',';
      out += std::to_string(a.location);
      out += '\n';
    }
  }
  return out;
}

inline std::string blocks_csv(const AgentTrajectory& traj) {
  std::string out = "year,bg_id,distance_d,supply,price,occupied,flood_prone\n";
  for (int y = 0; y < static_cast<int>(traj.blocks.size()); ++y) {
    for (const auto& b : traj.blocks[y]) {
      out += std::to_string(y);
      out += ',';
      out += std::to_string(b.id);
      out += ',';
      out += format_double(b.distance_d);
      out += ',';
      out += std::to_string(b.supply);
      out += ',';
      out += format_double(b.price);
      out += ',';
      out += std::to_string(b.occupied);
      out += ',';
      out += b.flood_prone ? '1' : '0';
      out += '\n';
    }
  }
  return out;
}

inline AgentTrajectory parse_agent_trajectory(const std::string& agents_text,
                                              const std::string& blocks_text,
                                              const std::string& scenario_text) {
  AgentTrajectory traj;
  traj.scenario = ScenarioParams::parse(scenario_text);

  const auto for_each_row = [](const std::string& text, std::string_view what, auto&& fn) {
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
      fn(split(line, ','), line_no, what);
    }
  };

  for_each_row(agents_text, "agents csv",
               [&](const std::vector<std::string_view>& f, int line_no, std::string_view what) {
                 if (f.size() != 4) {
                   throw IoError(std::string(what) + " line " + std::to_string(line_no) +
                                 ": expected 4 fields");
                 }
                 const int year = static_cast<int>(parse_int(trim(f[0]), what));
                 if (year < 0) throw IoError(std::string(what) + ": negative year");
                 if (year >= static_cast<int>(traj.agents.size())) traj.agents.resize(year + 1);
                 AgentSnap a;
                 a.id = static_cast<int>(parse_int(trim(f[1]), what));
                 a.income = parse_double(trim(f[2]), what);
                 a.location = static_cast<int>(parse_int(trim(f[3]), what));
                 traj.agents[year].push_back(a);
               });
  for_each_row(blocks_text, "blocks csv",
               [&](const std::vector<std::string_view>& f, int line_no, std::string_view what) {
                 if (f.size() != 7) {
                   throw IoError(std::string(what) + " line " + std::to_string(line_no) +
                                 ": expected 7 fields");
                 }
                 const int year = static_cast<int>(parse_int(trim(f[0]), what));
                 if (year < 0) throw IoError(std::string(what) + ": negative year");
                 if (year >= static_cast<int>(traj.blocks.size())) traj.blocks.resize(year + 1);
                 BlockSnap b;
                 b.id = static_cast<int>(parse_int(trim(f[1]), what));
                 b.distance_d = parse_double(trim(f[2]), what);
                 b.supply = static_cast<int>(parse_int(trim(f[3]), what));
                 b.price = parse_double(trim(f[4]), what);
                 b.occupied = static_cast<int>(parse_int(trim(f[5]), what));
                 b.flood_prone = parse_int(trim(f[6]), what) != 0;
                 traj.blocks[year].push_back(b);
               });
  if (traj.agents.size() != traj.blocks.size()) {
    throw IoError("agents and blocks cover different year ranges");
  }
  if (traj.agents.empty()) throw IoError("empty agent trajectory");
  return traj;
}

}  // namespace capnet
