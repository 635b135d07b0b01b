#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "capnet/csv.hpp"
#include "capnet/errors.hpp"

namespace capnet {

/// Subpopulations tracked per node (income tertiles low/mid/high).
inline constexpr int kSubpops = 3;

using NodeVec = std::array<double, kSubpops>;

/// State of the whole network: one NodeVec per node.
using SystemState = std::vector<NodeVec>;

inline constexpr std::array<std::string_view, 4> kCaseStudyLabels = {
    "urban", "suburban", "rural", "outmigrated"};

/// Index of the absorbing node in the case-study layout.
inline constexpr int kOutmigratedNode = 3;

/// Undirected simple graph over labeled regions. Adjacency is dense 0/1,
/// row-major, with a zero diagonal.
class RegionGraph {
 public:
  RegionGraph() = default;

  RegionGraph(std::vector<std::string> labels, std::vector<std::uint8_t> adjacency)
      : labels_(std::move(labels)), adj_(std::move(adjacency)) {
    const std::size_t n = labels_.size();
    if (adj_.size() != n * n) throw ConfigError("adjacency size does not match label count");
    for (std::size_t i = 0; i < n; ++i) {
      if (adj_[i * n + i] != 0) throw ConfigError("self-loop at node " + labels_[i]);
      for (std::size_t j = 0; j < n; ++j) {
        if (adj_[i * n + j] > 1) throw ConfigError("adjacency entries must be 0 or 1");
        if (adj_[i * n + j] != adj_[j * n + i]) {
          throw ConfigError("adjacency must be symmetric");
        }
      }
    }
  }

  int size() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }

  bool connected(int i, int j) const {
    check_node(i);
    check_node(j);
    return adj_[static_cast<std::size_t>(i) * labels_.size() + j] != 0;
  }

  /// Unchecked adjacency lookup for inner loops; indices must be in range.
  bool edge(int i, int j) const noexcept {
    return adj_[static_cast<std::size_t>(i) * labels_.size() + j] != 0;
  }

  /// Neighbor indices of node i, ascending.
  std::vector<int> neighbors(int i) const {
    check_node(i);
    std::vector<int> out;
    const std::size_t n = labels_.size();
    for (std::size_t j = 0; j < n; ++j) {
      if (adj_[static_cast<std::size_t>(i) * n + j]) out.push_back(static_cast<int>(j));
    }
    return out;
  }

  int index_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] == label) return static_cast<int>(i);
    }
    throw ConfigError("unknown node label '" + std::string(label) + "'");
  }

  /// Text form: comma-separated labels, then one comma-separated 0/1 row per node.
  std::string serialize() const {
    std::string out;
    const std::size_t n = labels_.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (i) out += ',';
      out += labels_[i];
    }
    out += '\n';
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j) out += ',';
        out += adj_[i * n + j] ? '1' : '0';
      }
      out += '\n';
    }
    return out;
  }

  static RegionGraph parse(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t pos = text.find('\n', start);
      if (pos == std::string::npos) pos = text.size();
      std::string_view line = trim(std::string_view(text).substr(start, pos - start));
      if (!line.empty()) lines.emplace_back(line);
      start = pos + 1;
    }
    if (lines.empty()) throw IoError("empty graph text");
    std::vector<std::string> labels;
    for (auto part : split(lines[0], ',')) {
      const auto t = trim(part);
      if (t.empty()) throw IoError("empty node label in graph text");
      labels.emplace_back(t);
    }
    const std::size_t n = labels.size();
    if (lines.size() != n + 1) throw IoError("graph text needs one adjacency row per node");
    std::vector<std::uint8_t> adj(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t j = 0;
      for (auto part : split(lines[i + 1], ',')) {
        const auto t = trim(part);
        if (t.empty()) continue;
        if (j >= n) throw IoError("too many entries in adjacency row " + std::to_string(i));
        if (t != "0" && t != "1") throw IoError("adjacency entries must be 0 or 1");
        adj[i * n + j] = (t == "1") ? 1 : 0;
        ++j;
      }
      if (j != n) throw IoError("too few entries in adjacency row " + std::to_string(i));
    }
    try {
      return RegionGraph(std::move(labels), std::move(adj));
    } catch (const ConfigError& e) {
      throw IoError(std::string("invalid graph text: ") + e.what());
    }
  }

 private:
  void check_node(int i) const {
    if (i < 0 || i >= size()) {
      throw ConfigError("node index " + std::to_string(i) + " out of range");
    }
  }

  std::vector<std::string> labels_;
  std::vector<std::uint8_t> adj_;
};

/// Complete graph over the given labels.
inline RegionGraph build_region_graph(std::vector<std::string> labels) {
  const std::size_t n = labels.size();
  std::vector<std::uint8_t> adj(n * n, 1);
  for (std::size_t i = 0; i < n; ++i) adj[i * n + i] = 0;
  return RegionGraph(std::move(labels), std::move(adj));
}

/// Graph with exactly the listed undirected edges. Unknown labels are
/// configuration errors.
inline RegionGraph build_region_graph(
    std::vector<std::string> labels,
    const std::vector<std::pair<std::string, std::string>>& edges) {
  const std::size_t n = labels.size();
  std::vector<std::uint8_t> adj(n * n, 0);
  const auto index_of = [&](const std::string& label) -> std::size_t {
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] == label) return i;
    }
    throw ConfigError("unknown node label '" + label + "' in edge list");
  };
  for (const auto& [a, b] : edges) {
    const std::size_t i = index_of(a);
    const std::size_t j = index_of(b);
    if (i == j) throw ConfigError("self-loop edge on '" + a + "'");
    adj[i * n + j] = 1;
    adj[j * n + i] = 1;
  }
  return RegionGraph(std::move(labels), std::move(adj));
}

/// Exogenous drivers for a rollout: per-year per-node inflow G (people/year,
/// attributed by subpopulation), per-year per-node capacity C (people), and an
/// optional per-year per-node outflow D. growth/decay have one entry per step;
/// capacity has one per step as well (capacity at the start of the step).
struct ExogenousSeries {
  std::vector<SystemState> growth;
  std::vector<std::vector<double>> capacity;
  std::vector<SystemState> decay;  // empty means identically zero

  int steps() const { return static_cast<int>(growth.size()); }

  void validate(int n_nodes) const {
    if (capacity.size() != growth.size()) {
      throw ConfigError("capacity series length does not match growth series");
    }
    if (!decay.empty() && decay.size() != growth.size()) {
      throw ConfigError("decay series length does not match growth series");
    }
    for (const auto& g : growth) {
      if (static_cast<int>(g.size()) != n_nodes) {
        throw ConfigError("growth entry has wrong node count");
      }
    }
    for (const auto& c : capacity) {
      if (static_cast<int>(c.size()) != n_nodes) {
        throw ConfigError("capacity entry has wrong node count");
      }
      for (double v : c) {
        if (!(v > 0.0)) throw ConfigError("capacities must be positive");
      }
    }
    for (const auto& d : decay) {
      if (static_cast<int>(d.size()) != n_nodes) {
        throw ConfigError("decay entry has wrong node count");
      }
    }
  }
};

}  // namespace capnet
