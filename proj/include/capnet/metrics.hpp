#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "capnet/coarsen.hpp"
#include "capnet/csv.hpp"
#include "capnet/ebm.hpp"
#include "capnet/errors.hpp"
#include "capnet/graph.hpp"
#include "capnet/train.hpp"

namespace capnet {

inline constexpr double kDefaultMapeFloor = 1000.0;  // people

inline void check_same_shape(const std::vector<SystemState>& a,
                             const std::vector<SystemState>& b, std::string_view what) {
  if (a.size() != b.size()) throw ConfigError(std::string(what) + ": length mismatch");
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].size() != b[k].size()) {
      throw ConfigError(std::string(what) + ": state size mismatch");
    }
  }
}

/// Mean absolute percent error over entries whose observed magnitude reaches
/// the floor; empty when nothing qualifies. Zero observations never
/// contribute, so the result is NaN-free.
inline std::optional<double> mape(const std::vector<SystemState>& predicted,
                                  const std::vector<SystemState>& observed, double floor) {
  if (floor < 0.0) throw ConfigError("mape: floor must be nonnegative");
  check_same_shape(predicted, observed, "mape");
  double total = 0.0;
  long long count = 0;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    for (std::size_t v = 0; v < predicted[k].size(); ++v) {
      for (int s = 0; s < kSubpops; ++s) {
        const double o = observed[k][v][s];
        if (std::abs(o) < floor || o == 0.0) continue;
        total += std::abs(predicted[k][v][s] - o) / std::abs(o);
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  return 100.0 * total / static_cast<double>(count);
}

/// Mean absolute error over all entries, in people.
inline double mae(const std::vector<SystemState>& predicted,
                  const std::vector<SystemState>& observed) {
  check_same_shape(predicted, observed, "mae");
  double total = 0.0;
  long long count = 0;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    for (std::size_t v = 0; v < predicted[k].size(); ++v) {
      for (int s = 0; s < kSubpops; ++s) {
        total += std::abs(predicted[k][v][s] - observed[k][v][s]);
        ++count;
      }
    }
  }
  if (count == 0) throw ConfigError("mae: empty trajectories");
  return total / static_cast<double>(count);
}

struct RunMetrics {
  int run_id = 0;
  std::optional<double> mape;  // empty when every entry sat below the floor
  double mae = 0.0;
  bool diverged = false;
};

struct MetricAggregate {
  double mean = 0.0;
  double best = 0.0;   // minimum
  double worst = 0.0;  // maximum
  int count = 0;
};

struct EvalSummary {
  std::vector<RunMetrics> runs;
  std::optional<MetricAggregate> mape_agg;
  std::optional<MetricAggregate> mae_agg;
  std::vector<int> excluded_runs;  // diverged run ids
};

inline std::optional<MetricAggregate> aggregate_metric(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  MetricAggregate agg;
  agg.count = static_cast<int>(values.size());
  agg.best = values[0];
  agg.worst = values[0];
  for (double v : values) {
    agg.mean += v;
    agg.best = std::min(agg.best, v);
    agg.worst = std::max(agg.worst, v);
  }
  agg.mean /= static_cast<double>(values.size());
  return agg;
}

inline void fill_aggregates(EvalSummary& summary) {
  std::vector<double> mapes, maes;
  for (const auto& r : summary.runs) {
    if (r.diverged) continue;
    if (r.mape) mapes.push_back(*r.mape);
    maes.push_back(r.mae);
  }
  summary.mape_agg = aggregate_metric(mapes);
  summary.mae_agg = aggregate_metric(maes);
}

/// Rolls every run out from its observed initial state with its own exogenous
/// series and aggregates per-run metrics. Diverged runs are flagged and left
/// out of the aggregates.
inline EvalSummary evaluate_split(const EbmParams& params,
                                  const std::vector<CoarseTrajectory>& split,
                                  const RegionGraph& graph, const EbmConfig& cfg,
                                  double floor = kDefaultMapeFloor) {
  if (split.empty()) throw ConfigError("evaluate_split: empty split");
  EvalSummary summary;
  for (const auto& run : split) {
    RunMetrics m;
    m.run_id = run.run_id;
    try {
      const auto predicted =
          euler_rollout(run.states[0], params, run.exogenous(), graph, cfg, run.years());
      m.mape = mape(predicted, run.states, floor);
      m.mae = mae(predicted, run.states);
    } catch (const DivergedError&) {
      m.diverged = true;
      summary.excluded_runs.push_back(run.run_id);
    }
    summary.runs.push_back(std::move(m));
  }
  fill_aggregates(summary);
  return summary;
}

/// Cumulative outflow at each year: total occupancy of the outmigrated node.
inline double outmigrated_total(const SystemState& state) {
  const auto& x = state[kOutmigratedNode];
  return x[0] + x[1] + x[2];
}

struct SeriesFiles {
  std::filesystem::path overlay;
  std::filesystem::path outmigration;
};

/// Plot-ready exports for one run: an overlay of observed vs predicted counts
/// per (year, node, subpop) and the cumulative outmigration series.
inline SeriesFiles export_series(const CoarseTrajectory& run,
                                 const std::vector<SystemState>& predicted,
                                 const std::filesystem::path& out_dir) {
  check_same_shape(predicted, run.states, "export_series");
  std::string overlay = "year,node,subpop,observed,predicted\n";
  for (int y = 0; y < static_cast<int>(run.states.size()); ++y) {
    for (int node = 0; node < run.n_nodes(); ++node) {
      for (int s = 0; s < kSubpops; ++s) {
        overlay += std::to_string(y);
        overlay += ',';
        overlay += std::to_string(node);
        overlay += ',';
        overlay += std::to_string(s);
        overlay += ',';
        overlay += format_double(run.states[y][node][s]);
        overlay += ',';
        overlay += format_double(predicted[y][node][s]);
        overlay += '\n';
      }
    }
  }
  std::string outm = "year,observed,predicted\n";
  for (int y = 0; y < static_cast<int>(run.states.size()); ++y) {
    outm += std::to_string(y);
    outm += ',';
    outm += format_double(outmigrated_total(run.states[y]));
    outm += ',';
    outm += format_double(outmigrated_total(predicted[y]));
    outm += '\n';
  }
  SeriesFiles files;
  files.overlay = out_dir / ("overlay_" + std::to_string(run.run_id) + ".csv");
  files.outmigration = out_dir / ("outmigration_" + std::to_string(run.run_id) + ".csv");
  write_file(files.overlay, overlay);
  write_file(files.outmigration, outm);
  return files;
}

/// Inverse of the overlay export; returns (observed, predicted).
inline std::pair<std::vector<SystemState>, std::vector<SystemState>> parse_overlay_csv(
    const std::string& text) {
  std::vector<SystemState> observed, predicted;
  std::size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string::npos) pos = text.size();
    const auto line = trim(std::string_view(text).substr(start, pos - start));
    start = pos + 1;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 5) throw IoError("overlay csv: expected 5 fields");
    const int year = static_cast<int>(parse_int(trim(f[0]), "overlay csv"));
    const int node = static_cast<int>(parse_int(trim(f[1]), "overlay csv"));
    const int subpop = static_cast<int>(parse_int(trim(f[2]), "overlay csv"));
    if (year < 0 || node < 0 || subpop < 0 || subpop >= kSubpops) {
      throw IoError("overlay csv: index out of range");
    }
    if (year >= static_cast<int>(observed.size())) {
      observed.resize(year + 1);
      predicted.resize(year + 1);
    }
    if (node >= static_cast<int>(observed[year].size())) {
      observed[year].resize(node + 1, NodeVec{0.0, 0.0, 0.0});
      predicted[year].resize(node + 1, NodeVec{0.0, 0.0, 0.0});
    }
    observed[year][node][subpop] = parse_double(trim(f[3]), "overlay csv");
    predicted[year][node][subpop] = parse_double(trim(f[4]), "overlay csv");
  }
  if (observed.empty()) throw IoError("overlay csv has no data rows");
  return {observed, predicted};
}

inline std::string summary_row(std::string_view split_name, const EvalSummary& s) {
  const auto opt = [](const std::optional<MetricAggregate>& agg, double MetricAggregate::*f) {
    return agg ? format_double((*agg).*f) : std::string("nan");
  };
  std::string row(split_name);
  row += ',' + opt(s.mape_agg, &MetricAggregate::mean);
  row += ',' + opt(s.mape_agg, &MetricAggregate::best);
  row += ',' + opt(s.mape_agg, &MetricAggregate::worst);
  row += ',' + opt(s.mae_agg, &MetricAggregate::mean);
  row += ',' + opt(s.mae_agg, &MetricAggregate::best);
  row += ',' + opt(s.mae_agg, &MetricAggregate::worst);
  row += '\n';
  return row;
}

inline std::string summary_csv(const EvalSummary& train, const EvalSummary& val,
                               const EvalSummary& test) {
  std::string out = "split,mape_mean,mape_best,mape_worst,mae_mean,mae_best,mae_worst\n";
  out += summary_row("train", train);
  out += summary_row("val", val);
  out += summary_row("test", test);
  return out;
}

}  // namespace capnet
