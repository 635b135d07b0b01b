#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "capnet/abm.hpp"
#include "capnet/coarsen.hpp"
#include "capnet/config.hpp"
#include "capnet/csv.hpp"
#include "capnet/ebm.hpp"
#include "capnet/errors.hpp"
#include "capnet/metrics.hpp"
#include "capnet/train.hpp"

namespace capnet {

namespace fs = std::filesystem;

inline fs::path raw_dir(const RunConfig& cfg) { return cfg.out / "raw"; }
inline fs::path coarse_dir(const RunConfig& cfg) { return cfg.out / "coarse"; }
inline fs::path train_dir(const RunConfig& cfg) { return cfg.out / "train"; }
inline fs::path eval_dir(const RunConfig& cfg) { return cfg.out / "eval"; }

/// Stage output directories start empty: an existing non-empty directory is
/// refused unless force, in which case it is wiped.
inline void prepare_stage_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_empty(dir, ec)) {
    if (!force) {
      throw ConfigError("output directory " + dir.string() +
                        " is not empty; pass --force to overwrite");
    }
    fs::remove_all(dir, ec);
    if (ec) throw IoError("cannot clear " + dir.string() + ": " + ec.message());
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

inline int resolve_jobs(int jobs) {
  if (jobs > 0) return jobs;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Tasks must be
/// independent; the first exception is rethrown after all workers finish.
template <typename Fn>
void parallel_for(int n, int jobs, Fn&& fn) {
  jobs = std::min(resolve_jobs(jobs), std::max(n, 1));
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      while (!failed.load(std::memory_order_relaxed)) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!error) error = std::current_exception();
          }
          failed.store(true, std::memory_order_relaxed);
          return;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

inline fs::path agents_path(const RunConfig& cfg, int run) {
  return raw_dir(cfg) / ("agents_" + std::to_string(run) + ".csv");
}
inline fs::path blocks_path(const RunConfig& cfg, int run) {
  return raw_dir(cfg) / ("blocks_" + std::to_string(run) + ".csv");
}
inline fs::path scenario_path(const RunConfig& cfg, int run) {
  return raw_dir(cfg) / ("scenario_" + std::to_string(run) + ".txt");
}
inline fs::path coarse_path(const RunConfig& cfg, int run) {
  return coarse_dir(cfg) / ("coarse_" + std::to_string(run) + ".csv");
}

/// Simulate every scenario and persist one agents/blocks/scenario trio per
/// run plus a manifest of the per-run seeds.
inline void cmd_generate(const RunConfig& cfg) {
  cfg.validate();
  prepare_stage_dir(raw_dir(cfg), cfg.force);
  std::vector<ScenarioParams> scenarios(cfg.n_runs);
  parallel_for(cfg.n_runs, cfg.jobs, [&](int run) {
    const ScenarioParams sc = sample_scenario(cfg.master_seed, run);
    AgentTrajectory traj = run_simulation(sc, cfg.years, cfg.n_block_groups);
    traj.run_id = run;
    write_file(agents_path(cfg, run), agents_csv(traj));
    write_file(blocks_path(cfg, run), blocks_csv(traj));
    write_file(scenario_path(cfg, run), sc.serialize());
    scenarios[run] = sc;
  });
  std::string manifest = "run,seed,years,n_block_groups\n";
  for (int run = 0; run < cfg.n_runs; ++run) {
    manifest += std::to_string(run) + ',' + std::to_string(scenarios[run].seed) + ',' +
                std::to_string(cfg.years) + ',' + std::to_string(cfg.n_block_groups) + '\n';
  }
  write_file(raw_dir(cfg) / "manifest.txt", manifest);
}

inline AgentTrajectory load_run(const RunConfig& cfg, int run) {
  for (const auto& p : {agents_path(cfg, run), blocks_path(cfg, run), scenario_path(cfg, run)}) {
    if (!fs::exists(p)) {
      throw IoError("missing " + p.string() + "; run 'generate' first");
    }
  }
  AgentTrajectory traj =
      parse_agent_trajectory(read_file(agents_path(cfg, run)), read_file(blocks_path(cfg, run)),
                             read_file(scenario_path(cfg, run)));
  traj.run_id = run;
  return traj;
}

/// Aggregate every run onto the coarse graph. In auto income mode the
/// tertile thresholds are computed from each run's year-0 incomes and frozen;
/// thresholds.csv records what was used.
inline void cmd_coarsen(const RunConfig& cfg) {
  cfg.validate();
  prepare_stage_dir(coarse_dir(cfg), cfg.force);
  std::vector<AggregationRules> used(cfg.n_runs);
  parallel_for(cfg.n_runs, cfg.jobs, [&](int run) {
    const AgentTrajectory traj = load_run(cfg, run);
    AggregationRules rules = cfg.rules();
    if (cfg.income_mode == "auto") {
      std::vector<double> incomes;
      incomes.reserve(traj.agents[0].size());
      for (const auto& a : traj.agents[0]) incomes.push_back(a.income);
      const auto [i1, i2] = compute_income_thresholds(std::move(incomes));
      rules.income_i1 = i1;
      rules.income_i2 = i2;
    }
    const CoarseTrajectory coarse = build_coarse_trajectory(traj, rules);
    write_file(coarse_path(cfg, run), coarse_csv(coarse));
    used[run] = rules;
  });
  std::string thresholds = "run,zone_d1,zone_d2,income_i1,income_i2,people_per_agent\n";
  for (int run = 0; run < cfg.n_runs; ++run) {
    thresholds += std::to_string(run) + ',' + format_double(used[run].zone_d1) + ',' +
                  format_double(used[run].zone_d2) + ',' + format_double(used[run].income_i1) +
                  ',' + format_double(used[run].income_i2) + ',' +
                  format_double(used[run].people_per_agent) + '\n';
  }
  write_file(coarse_dir(cfg) / "thresholds.csv", thresholds);
}

inline std::vector<CoarseTrajectory> load_coarse_runs(const RunConfig& cfg) {
  std::vector<CoarseTrajectory> runs;
  runs.reserve(cfg.n_runs);
  for (int run = 0; run < cfg.n_runs; ++run) {
    const fs::path p = coarse_path(cfg, run);
    if (!fs::exists(p)) throw IoError("missing " + p.string() + "; run 'coarsen' first");
    runs.push_back(parse_coarse_csv(read_file(p), run));
  }
  return runs;
}

inline SplitIndices pipeline_split(const RunConfig& cfg) {
  return split_dataset(cfg.n_runs, cfg.splits, derive_seed(cfg.master_seed, "split"));
}

inline EbmConfig ebm_config(const RunConfig& cfg, int n_nodes) {
  EbmConfig e;
  e.n_nodes = n_nodes;
  e.dt = cfg.dt;
  e.beta_literal = cfg.beta_literal;
  return e;
}

struct TrainOutcome {
  int best_epoch = -1;
  double best_val_loss = 0.0;
  int epochs_run = 0;
};

/// Fit the closure to the training split with validation-based early
/// stopping; persists history.csv, best_params.txt, and periodic checkpoints.
inline TrainOutcome cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const std::vector<CoarseTrajectory> runs = load_coarse_runs(cfg);
  const SplitIndices split = pipeline_split(cfg);
  if (split.train.empty() || split.val.empty()) {
    throw ConfigError("split leaves train or validation empty; need more runs");
  }
  const RegionGraph graph = build_graph(cfg);
  if (!runs.empty() && runs[0].n_nodes() != graph.size()) {
    throw ConfigError("coarse data node count does not match the configured graph");
  }
  prepare_stage_dir(train_dir(cfg), cfg.force);
  const fs::path ckpt_dir = train_dir(cfg) / "checkpoints";
  TrainOptions opts;
  opts.learning_rate = cfg.learning_rate;
  opts.patience = cfg.patience;
  opts.max_epochs = cfg.max_epochs;
  const EbmConfig ecfg = ebm_config(cfg, graph.size());
  const TrainReport report =
      train(select_runs(runs, split.train), select_runs(runs, split.val), graph, ecfg, opts,
            derive_seed(cfg.master_seed, "train"),
            [&](int epoch, const EbmParams& params, double, double) {
              if (epoch % cfg.checkpoint_every == 0) {
                write_file(ckpt_dir / ("epoch_" + std::to_string(epoch) + ".txt"),
                           serialize_params(params));
              }
            });
  std::string history = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < report.train_losses.size(); ++e) {
    history += std::to_string(e) + ',' + format_double(report.train_losses[e]) + ',' +
               format_double(report.val_losses[e]) + '\n';
  }
  write_file(train_dir(cfg) / "history.csv", history);
  write_file(train_dir(cfg) / "best_params.txt", serialize_params(report.best_params));
  return {report.best_epoch, report.best_val_loss, report.epochs_run};
}

struct EvalOutcome {
  EvalSummary train, val, test;
};

/// Metrics for every split plus exemplar exports: the worst-MAPE and best-MAE
/// runs of each split get overlay and outmigration series.
inline EvalOutcome cmd_evaluate(const RunConfig& cfg) {
  cfg.validate();
  const std::vector<CoarseTrajectory> runs = load_coarse_runs(cfg);
  const SplitIndices split = pipeline_split(cfg);
  const fs::path params_path = train_dir(cfg) / "best_params.txt";
  if (!fs::exists(params_path)) {
    throw IoError("missing " + params_path.string() + "; run 'train' first");
  }
  const EbmParams params = parse_params(read_file(params_path));
  const RegionGraph graph = build_graph(cfg);
  if (params.n_nodes != graph.size()) {
    throw ConfigError("trained parameters disagree with the configured graph size");
  }
  prepare_stage_dir(eval_dir(cfg), cfg.force);
  const EbmConfig ecfg = ebm_config(cfg, graph.size());

  EvalOutcome outcome;
  std::string exemplars = "split,tag,run,value\n";
  const auto eval_one = [&](const std::vector<int>& indices, std::string_view name,
                            EvalSummary& out) {
    if (indices.empty()) return;
    const auto subset = select_runs(runs, indices);
    out = evaluate_split(params, subset, graph, ecfg, cfg.mape_floor);
    std::optional<int> worst_mape_run, best_mae_run;
    double worst_mape = -1.0, best_mae = 0.0;
    for (const auto& m : out.runs) {
      if (m.diverged) continue;
      if (m.mape && *m.mape > worst_mape) {
        worst_mape = *m.mape;
        worst_mape_run = m.run_id;
      }
      if (!best_mae_run || m.mae < best_mae) {
        best_mae = m.mae;
        best_mae_run = m.run_id;
      }
    }
    const auto export_run = [&](int run_id, std::string_view tag, double value) {
      const auto& run = runs[run_id];
      const auto predicted =
          euler_rollout(run.states[0], params, run.exogenous(), graph, ecfg, run.years());
      export_series(run, predicted, eval_dir(cfg));
      exemplars += std::string(name) + ',' + std::string(tag) + ',' + std::to_string(run_id) +
                   ',' + format_double(value) + '\n';
    };
    if (worst_mape_run) export_run(*worst_mape_run, "worst_mape", worst_mape);
    if (best_mae_run) export_run(*best_mae_run, "best_mae", best_mae);
  };
  eval_one(split.train, "train", outcome.train);
  eval_one(split.val, "val", outcome.val);
  eval_one(split.test, "test", outcome.test);

  write_file(eval_dir(cfg) / "summary.csv",
             summary_csv(outcome.train, outcome.val, outcome.test));
  write_file(eval_dir(cfg) / "exemplars.csv", exemplars);
  return outcome;
}

struct SimulateOutcome {
  int steps = 0;
  double median_ms = 0.0;
};

/// Roll the model forward from the initial state of x0_file, driven by the
/// G/C columns of exogenous_file (both in the coarse CSV format). Writes the
/// trajectory and reports the median wall time of 100 repeat rollouts.
inline SimulateOutcome cmd_simulate(const fs::path& params_file, const fs::path& x0_file,
                                    const fs::path& exogenous_file, int steps,
                                    const fs::path& out_file, bool beta_literal = false,
                                    double dt = 1.0) {
  const EbmParams params = parse_params(read_file(params_file));
  const CoarseTrajectory x0_src = parse_coarse_csv(read_file(x0_file), 0);
  const CoarseTrajectory exo_src = parse_coarse_csv(read_file(exogenous_file), 0);
  if (x0_src.n_nodes() != params.n_nodes || exo_src.n_nodes() != params.n_nodes) {
    throw ConfigError("node counts of params, x0, and exogenous inputs disagree");
  }
  const int N = steps < 0 ? exo_src.years() : steps;
  if (N > exo_src.years()) {
    throw ConfigError("exogenous series covers " + std::to_string(exo_src.years()) +
                      " steps, asked for " + std::to_string(N));
  }
  EbmConfig ecfg;
  ecfg.n_nodes = params.n_nodes;
  ecfg.dt = dt;
  ecfg.beta_literal = beta_literal;
  std::vector<std::string> labels;
  for (int v = 0; v < params.n_nodes; ++v) {
    labels.push_back(v < static_cast<int>(kCaseStudyLabels.size())
                         ? std::string(kCaseStudyLabels[v])
                         : "n" + std::to_string(v));
  }
  const RegionGraph graph = build_region_graph(std::move(labels));
  const ExogenousSeries exo = exo_src.exogenous();
  const SystemState& X0 = x0_src.states[0];

  const auto traj = euler_rollout(X0, params, exo, graph, ecfg, N);
  std::string out = "year,node,subpop,count\n";
  for (int y = 0; y <= N; ++y) {
    for (int node = 0; node < params.n_nodes; ++node) {
      for (int s = 0; s < kSubpops; ++s) {
        out += std::to_string(y) + ',' + std::to_string(node) + ',' + std::to_string(s) + ',' +
               format_double(traj[y][node][s]) + '\n';
      }
    }
  }
  write_file(out_file, out);

  std::vector<double> times;
  times.reserve(100);
  for (int rep = 0; rep < 100; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto t = euler_rollout(X0, params, exo, graph, ecfg, N);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    if (t.size() != traj.size()) throw DivergedError("rollout repetition mismatch");
  }
  std::sort(times.begin(), times.end());
  return {N, times[times.size() / 2]};
}

struct GradCheckOutcome {
  double max_rel_err = 0.0;
  int failures = 0;
  std::vector<double> per_instance;
};

/// Finite-difference verification on freshly generated random instances.
inline GradCheckOutcome cmd_check_grad(std::uint64_t master_seed, int instances, double eps,
                                       double tolerance) {
  if (instances < 1) throw ConfigError("need at least one instance");
  if (!(eps > 0.0) || !(tolerance > 0.0)) {
    throw ConfigError("eps and tolerance must be positive");
  }
  GradCheckOutcome out;
  for (int i = 0; i < instances; ++i) {
    const GradCheckInstance inst =
        make_grad_check_instance(derive_seed(master_seed, "gradcheck", i));
    const double err = finite_diff_check(inst.params, inst.probe, inst.graph, inst.cfg, eps);
    out.per_instance.push_back(err);
    out.max_rel_err = std::max(out.max_rel_err, err);
    if (!(err < tolerance)) ++out.failures;
  }
  return out;
}

}  // namespace capnet
