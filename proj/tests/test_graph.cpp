#include <catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "capnet/errors.hpp"
#include "capnet/graph.hpp"

using capnet::build_region_graph;
using capnet::ConfigError;
using capnet::IoError;
using capnet::RegionGraph;

namespace {
std::vector<std::string> case_labels() {
  return {"urban", "suburban", "rural", "outmigrated"};
}
}  // namespace

TEST_CASE("complete graph over four labels has twelve edges and a zero diagonal") {
  const RegionGraph g = build_region_graph(case_labels());
  REQUIRE(g.size() == 4);
  int ones = 0;
  for (int i = 0; i < 4; ++i) {
    CHECK_FALSE(g.connected(i, i));
    for (int j = 0; j < 4; ++j) ones += g.connected(i, j);
  }
  CHECK(ones == 12);
}

TEST_CASE("single-label complete graph is edgeless") {
  const RegionGraph g = build_region_graph({"solo"});
  REQUIRE(g.size() == 1);
  CHECK_FALSE(g.connected(0, 0));
  CHECK(g.neighbors(0).empty());
}

TEST_CASE("custom edge list sets exactly the requested symmetric pair") {
  const RegionGraph g = build_region_graph({"urban", "suburban", "rural"},
                                           {{"urban", "suburban"}});
  CHECK(g.connected(0, 1));
  CHECK(g.connected(1, 0));
  int ones = 0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) ones += g.connected(i, j);
  }
  CHECK(ones == 2);
}

TEST_CASE("custom edge referencing an unknown label is a configuration error") {
  CHECK_THROWS_AS(build_region_graph({"a", "b"}, {{"a", "nope"}}), ConfigError);
  CHECK_THROWS_AS(build_region_graph({"a", "b"}, {{"a", "a"}}), ConfigError);
}

TEST_CASE("adjacency validation rejects malformed matrices") {
  CHECK_THROWS_AS(RegionGraph({"a", "b"}, {0, 1, 1}), ConfigError);           // size
  CHECK_THROWS_AS(RegionGraph({"a", "b"}, {1, 1, 1, 0}), ConfigError);        // diagonal
  CHECK_THROWS_AS(RegionGraph({"a", "b"}, {0, 1, 0, 0}), ConfigError);        // symmetry
  CHECK_THROWS_AS(RegionGraph({"a", "b"}, {0, 2, 2, 0}), ConfigError);        // 0/1 only
}

TEST_CASE("neighbors lists are sorted and mutual") {
  const RegionGraph complete = build_region_graph(case_labels());
  CHECK(complete.neighbors(0) == std::vector<int>{1, 2, 3});

  const RegionGraph custom = build_region_graph({"a", "b", "c"}, {{"a", "c"}});
  CHECK(custom.neighbors(2) == std::vector<int>{0});
  CHECK(custom.neighbors(1).empty());

  // j in neighbors(i) iff i in neighbors(j).
  for (int i = 0; i < custom.size(); ++i) {
    for (int j : custom.neighbors(i)) {
      const auto back = custom.neighbors(j);
      CHECK(std::find(back.begin(), back.end(), i) != back.end());
    }
  }
}

TEST_CASE("out-of-range node queries are rejected") {
  const RegionGraph g = build_region_graph({"a", "b"});
  CHECK_THROWS_AS(g.neighbors(2), ConfigError);
  CHECK_THROWS_AS(g.neighbors(-1), ConfigError);
  CHECK_THROWS_AS(g.connected(0, 5), ConfigError);
  CHECK_THROWS_AS(g.index_of("missing"), ConfigError);
  CHECK(g.index_of("b") == 1);
}

TEST_CASE("graph text round-trips exactly") {
  const RegionGraph g = build_region_graph({"a", "b", "c"}, {{"a", "b"}, {"b", "c"}});
  const std::string text = g.serialize();
  const RegionGraph back = RegionGraph::parse(text);
  REQUIRE(back.size() == g.size());
  CHECK(back.labels() == g.labels());
  for (int i = 0; i < g.size(); ++i) {
    for (int j = 0; j < g.size(); ++j) {
      CHECK(back.connected(i, j) == g.connected(i, j));
    }
  }
  CHECK(back.serialize() == text);
}

TEST_CASE("graph text parsing rejects malformed input") {
  CHECK_THROWS_AS(RegionGraph::parse(""), IoError);
  CHECK_THROWS_AS(RegionGraph::parse("a,b\n0,1\n"), IoError);          // missing row
  CHECK_THROWS_AS(RegionGraph::parse("a,b\n0,1\n1,0\n1,1\n"), IoError);  // extra row
  CHECK_THROWS_AS(RegionGraph::parse("a,b\n0,2\n2,0\n"), IoError);      // bad entry
  CHECK_THROWS_AS(RegionGraph::parse("a,b\n0,1\n0,1\n"), IoError);      // asymmetric
}
