#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "capnet/abm.hpp"
#include "capnet/coarsen.hpp"
#include "capnet/errors.hpp"
#include "capnet/graph.hpp"
#include "capnet/rng.hpp"
#include "support/oracles.hpp"

using namespace capnet;

TEST_CASE("zone classification honors inclusive boundaries") {
  const AggregationRules rules;
  CHECK(classify_zone(0.10, rules) == kZoneUrban);
  CHECK(classify_zone(0.126, rules) == kZoneUrban);  // boundary stays urban
  CHECK(classify_zone(0.127, rules) == kZoneSuburban);
  CHECK(classify_zone(0.355, rules) == kZoneSuburban);
  CHECK(classify_zone(0.50, rules) == kZoneRural);
  // Total and partitioning over a sweep.
  for (double d = 0.0; d <= 1.0; d += 0.001) {
    const int z = classify_zone(d, rules);
    REQUIRE(z >= 0);
    REQUIRE(z <= 2);
  }
}

TEST_CASE("income classification honors inclusive boundaries") {
  const AggregationRules rules;
  CHECK(classify_income(20000.0, rules) == 0);
  CHECK(classify_income(26500.0, rules) == 0);  // boundary stays low
  CHECK(classify_income(26500.01, rules) == 1);
  CHECK(classify_income(36700.0, rules) == 1);
  CHECK(classify_income(40000.0, rules) == 2);
}

TEST_CASE("tertile thresholds bracket the middle of a small sample") {
  const auto [i1, i2] = compute_income_thresholds({10.0, 20.0, 30.0});
  CHECK(i1 < i2);
  CHECK(i1 <= 20.0);
  CHECK(20.0 <= i2);
  CHECK_THROWS_AS(compute_income_thresholds({1.0, 2.0}), ConfigError);
  CHECK_THROWS_AS(compute_income_thresholds({5.0, 5.0, 5.0}), ConfigError);
}

TEST_CASE("tertiles split a large sample into thirds") {
  Rng rng(42);
  std::vector<double> incomes;
  for (int k = 0; k < 9000; ++k) incomes.push_back(base_income(rng));
  const auto [i1, i2] = compute_income_thresholds(incomes);
  int low = 0, mid = 0, high = 0;
  AggregationRules rules;
  rules.income_i1 = i1;
  rules.income_i2 = i2;
  for (double inc : incomes) {
    const int c = classify_income(inc, rules);
    low += c == 0;
    mid += c == 1;
    high += c == 2;
  }
  CHECK(std::abs(low - 3000) <= 2);
  CHECK(std::abs(mid - 3000) <= 2);
  CHECK(std::abs(high - 3000) <= 2);
}

TEST_CASE("synthetic income tertiles land near the case-study dollar cutoffs") {
  Rng rng(2024);
  std::vector<double> incomes;
  for (int k = 0; k < 3000; ++k) incomes.push_back(base_income(rng));
  const auto [i1, i2] = compute_income_thresholds(incomes);
  CHECK(std::abs(i1 - kDefaultIncomeI1) / kDefaultIncomeI1 < 0.20);
  CHECK(std::abs(i2 - kDefaultIncomeI2) / kDefaultIncomeI2 < 0.20);
}

TEST_CASE("aggregation rules are validated") {
  AggregationRules bad;
  bad.zone_d1 = 0.5;
  bad.zone_d2 = 0.4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = AggregationRules{};
  bad.income_i1 = bad.income_i2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = AggregationRules{};
  bad.people_per_agent = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("an empty snapshot aggregates to zero counts") {
  const std::vector<BlockSnap> blocks = {{0, 0.1, 10, 100.0, 5, false}};
  const SystemState s = aggregate_snapshot({}, blocks, AggregationRules{});
  REQUIRE(s.size() == 4);
  for (const auto& node : s) {
    for (double v : node) REQUIRE(v == 0.0);
  }
}

TEST_CASE("a single suburban middle-income agent lands in one cell") {
  const std::vector<BlockSnap> blocks = {{3, 0.2, 10, 100.0, 1, false}};
  const std::vector<AgentSnap> agents = {{0, 30000.0, 3}};
  const SystemState s = aggregate_snapshot(agents, blocks, AggregationRules{});
  for (int node = 0; node < 4; ++node) {
    for (int sub = 0; sub < kSubpops; ++sub) {
      if (node == kZoneSuburban && sub == 1) {
        REQUIRE(s[node][sub] == kDefaultPeoplePerAgent);
      } else {
        REQUIRE(s[node][sub] == 0.0);
      }
    }
  }
}

TEST_CASE("outmigrated agents land in the absorbing node") {
  const std::vector<BlockSnap> blocks = {{0, 0.2, 10, 100.0, 0, false}};
  const std::vector<AgentSnap> agents = {{0, 50000.0, kOutmigratedLocation}};
  const SystemState s = aggregate_snapshot(agents, blocks, AggregationRules{});
  CHECK(s[kOutmigratedNode][2] == kDefaultPeoplePerAgent);
  CHECK_THROWS_AS(aggregate_snapshot({{0, 1000.0, 7}}, blocks, AggregationRules{}),
                  ConfigError);  // unknown block group
}

TEST_CASE("snapshot aggregation equals the brute-force recount") {
  for (std::uint64_t seed = 500; seed < 510; ++seed) {
    Rng rng(seed);
    const int n_bgs = rng.uniform_int(3, 12);
    std::vector<BlockSnap> blocks;
    for (int b = 0; b < n_bgs; ++b) {
      blocks.push_back({b, rng.uniform01(), 20, 1.0, 0, false});
    }
    std::vector<AgentSnap> agents;
    const int n_agents = 500;
    for (int a = 0; a < n_agents; ++a) {
      const int loc = rng.bernoulli(0.15) ? kOutmigratedLocation : rng.uniform_int(0, n_bgs - 1);
      agents.push_back({a, base_income(rng), loc});
    }
    const AggregationRules rules;
    const SystemState got = aggregate_snapshot(agents, blocks, rules);
    const SystemState want = oracles::brute_recount(agents, blocks, rules);
    REQUIRE(got == want);
    // Mass accounting: total equals the agent count times the factor.
    double total = 0.0;
    for (const auto& node : got) {
      for (double v : node) total += v;
    }
    REQUIRE(total == n_agents * rules.people_per_agent);
  }
}

TEST_CASE("coarse trajectories keep every year and conserve people") {
  const ScenarioParams sc = sample_scenario(911, 0);
  const AgentTrajectory run = run_simulation(sc, 10, 20);
  const CoarseTrajectory ct = build_coarse_trajectory(run, AggregationRules{});
  REQUIRE(ct.years() == 10);
  REQUIRE(ct.states.size() == 11);
  REQUIRE(ct.capacity.size() == 11);
  REQUIRE(ct.n_nodes() == 4);  // 12 state entries per year

  const AggregationRules rules;
  for (int y = 0; y <= 10; ++y) {
    for (const auto& node : ct.states[y]) {
      for (double v : node) REQUIRE(v >= 0.0);
    }
    // Sum over all nodes equals all agents ever created through year y.
    double total = 0.0;
    for (const auto& node : ct.states[y]) {
      for (double v : node) total += v;
    }
    REQUIRE(total == static_cast<double>(run.agents[y].size()) * rules.people_per_agent);
    // Capacity of the absorbing node is pinned to the year-0 real total.
    REQUIRE(ct.capacity[y][kOutmigratedNode] ==
            ct.capacity[0][0] + ct.capacity[0][1] + ct.capacity[0][2]);
  }
  // Growth totals equal the new agents appearing each year.
  for (int y = 1; y <= 10; ++y) {
    double g_total = 0.0;
    for (const auto& node : ct.growth[y - 1]) {
      for (double v : node) g_total += v;
    }
    const double newcomers =
        static_cast<double>(run.agents[y].size() - run.agents[y - 1].size());
    REQUIRE(g_total == newcomers * rules.people_per_agent);
  }
}

TEST_CASE("zero population growth yields an identically zero growth series") {
  ScenarioParams sc = sample_scenario(912, 0);
  sc.population_growth_rate = 0.0;
  const AgentTrajectory run = run_simulation(sc, 6, 15);
  const CoarseTrajectory ct = build_coarse_trajectory(run, AggregationRules{});
  for (const auto& year : ct.growth) {
    for (const auto& node : year) {
      for (double v : node) REQUIRE(v == 0.0);
    }
  }
}

TEST_CASE("coarse CSV round-trips byte for byte") {
  const ScenarioParams sc = sample_scenario(913, 0);
  const AgentTrajectory run = run_simulation(sc, 5, 12);
  const CoarseTrajectory ct = build_coarse_trajectory(run, AggregationRules{});
  const std::string text = coarse_csv(ct);
  const CoarseTrajectory back = parse_coarse_csv(text, ct.run_id);
  CHECK(back.states == ct.states);
  CHECK(back.growth == ct.growth);
  CHECK(back.capacity == ct.capacity);
  CHECK(coarse_csv(back) == text);
}

TEST_CASE("coarse CSV parsing rejects malformed tables") {
  CHECK_THROWS_AS(parse_coarse_csv("year,node,subpop,count,G,C\n", 0), IoError);
  CHECK_THROWS_AS(parse_coarse_csv("year,node,subpop,count,G,C\n0,0,0,1,0\n", 0), IoError);
  // Missing rows for subpops 1..2.
  CHECK_THROWS_AS(parse_coarse_csv("year,node,subpop,count,G,C\n0,0,0,1,0,10\n", 0), IoError);
  const std::string dup =
      "year,node,subpop,count,G,C\n"
      "0,0,0,1,0,10\n0,0,0,2,0,10\n0,0,1,1,0,10\n0,0,2,1,0,10\n";
  CHECK_THROWS_AS(parse_coarse_csv(dup, 0), IoError);
  // Nonzero growth in the final year.
  const std::string tail_g =
      "year,node,subpop,count,G,C\n0,0,0,1,5,10\n0,0,1,1,0,10\n0,0,2,1,0,10\n";
  CHECK_THROWS_AS(parse_coarse_csv(tail_g, 0), IoError);
  // Nonpositive capacity.
  const std::string bad_c =
      "year,node,subpop,count,G,C\n0,0,0,1,0,0\n0,0,1,1,0,0\n0,0,2,1,0,0\n";
  CHECK_THROWS_AS(parse_coarse_csv(bad_c, 0), IoError);
}

TEST_CASE("dataset splits follow the rounded cumulative boundaries") {
  const SplitFractions f;
  const SplitIndices s50 = split_dataset(50, f, 7);
  CHECK(s50.train.size() == 25);
  CHECK(s50.val.size() == 7);
  CHECK(s50.test.size() == 18);

  const SplitIndices s3 = split_dataset(3, f, 7);
  CHECK(s3.train.size() == 2);
  CHECK(s3.val.size() == 0);
  CHECK(s3.test.size() == 1);
}

TEST_CASE("splits are deterministic, disjoint, and cover every run") {
  const SplitFractions f;
  const SplitIndices a = split_dataset(20, f, 99);
  const SplitIndices b = split_dataset(20, f, 99);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  const SplitIndices c = split_dataset(20, f, 100);
  CHECK((a.train != c.train || a.val != c.val || a.test != c.test));

  std::set<int> all;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    REQUIRE(std::is_sorted(part->begin(), part->end()));
    for (int i : *part) {
      REQUIRE(all.insert(i).second);  // disjoint
      REQUIRE(i >= 0);
      REQUIRE(i < 20);
    }
  }
  CHECK(all.size() == 20);  // cover
}

TEST_CASE("split fractions must sum to one") {
  SplitFractions f;
  f.train = 0.6;
  CHECK_THROWS_AS(split_dataset(10, f, 1), ConfigError);
  f = SplitFractions{};
  CHECK_THROWS_AS(split_dataset(2, f, 1), ConfigError);  // too few runs
}

TEST_CASE("run selection picks by index") {
  std::vector<CoarseTrajectory> runs(3);
  runs[0].run_id = 10;
  runs[1].run_id = 11;
  runs[2].run_id = 12;
  const auto picked = select_runs(runs, {2, 0});
  REQUIRE(picked.size() == 2);
  CHECK(picked[0].run_id == 12);
  CHECK(picked[1].run_id == 10);
}
