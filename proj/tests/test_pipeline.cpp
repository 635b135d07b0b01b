#include <catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "capnet/config.hpp"
#include "capnet/csv.hpp"
#include "capnet/ebm.hpp"
#include "capnet/errors.hpp"
#include "capnet/graph.hpp"
#include "capnet/pipeline.hpp"

using namespace capnet;
namespace fs = std::filesystem;

TEST_CASE("config entries parse into typed fields") {
  RunConfig cfg;
  apply_config_entry(cfg, "master_seed", "123");
  apply_config_entry(cfg, "n_runs", "5");
  apply_config_entry(cfg, "beta_literal", "true");
  apply_config_entry(cfg, "learning_rate", "0.25");
  apply_config_entry(cfg, "out", "elsewhere");
  apply_config_entry(cfg, "train_frac", "0.6");
  CHECK(cfg.master_seed == 123);
  CHECK(cfg.n_runs == 5);
  CHECK(cfg.beta_literal);
  CHECK(cfg.learning_rate == 0.25);
  CHECK(cfg.out == fs::path("elsewhere"));
  CHECK(cfg.splits.train == 0.6);

  apply_config_entry(cfg, "beta_literal", "0");
  CHECK_FALSE(cfg.beta_literal);

  CHECK_THROWS_AS(apply_config_entry(cfg, "no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(apply_config_entry(cfg, "n_runs", "many"), ConfigError);
  CHECK_THROWS_AS(apply_config_entry(cfg, "zone_d1", "wide"), ConfigError);
  CHECK_THROWS_AS(apply_config_entry(cfg, "beta_literal", "maybe"), ConfigError);
}

TEST_CASE("config files allow comments and blank lines") {
  const fs::path dir = fs::temp_directory_path() / "capnet_config_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path file = dir / "run.cfg";
  write_file(file,
             "# pipeline settings\n"
             "master_seed = 99\n"
             "\n"
             "n_runs=6\n"
             "  years = 12  \n");
  RunConfig cfg;
  load_config_file(cfg, file);
  CHECK(cfg.master_seed == 99);
  CHECK(cfg.n_runs == 6);
  CHECK(cfg.years == 12);

  write_file(file, "patience 3\n");
  RunConfig cfg2;
  CHECK_THROWS_AS(load_config_file(cfg2, file), ConfigError);
  CHECK_THROWS_AS(load_config_file(cfg2, dir / "missing.cfg"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("config validation rejects inconsistent settings") {
  RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  RunConfig bad = cfg;
  bad.n_runs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.zone_d1 = 0.5;
  bad.zone_d2 = 0.2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.income_mode = "fixed";
  bad.income_i1 = 40000;
  bad.income_i2 = 30000;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.income_mode = "guess";
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.topology = "custom";
  CHECK_THROWS_AS(bad.validate(), ConfigError);  // needs an edge list

  bad = cfg;
  bad.splits.train = 0.9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.checkpoint_every = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("the configured topology builds the case-study graph") {
  RunConfig cfg;
  const RegionGraph complete = build_graph(cfg);
  REQUIRE(complete.size() == 4);
  int edges = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) edges += complete.connected(i, j) ? 1 : 0;
  }
  CHECK(edges == 12);

  cfg.topology = "custom";
  cfg.edges = "urban-suburban, suburban-rural";
  const RegionGraph chain = build_graph(cfg);
  CHECK(chain.connected(0, 1));
  CHECK(chain.connected(1, 2));
  CHECK_FALSE(chain.connected(0, 2));
  CHECK_FALSE(chain.connected(0, 3));

  cfg.edges = "urban suburban";
  CHECK_THROWS_AS(build_graph(cfg), ConfigError);
  cfg.edges = "urban-downtown";
  CHECK_THROWS_AS(build_graph(cfg), ConfigError);
  cfg.edges = " , ";
  CHECK_THROWS_AS(build_graph(cfg), ConfigError);
}

TEST_CASE("stage directories refuse to clobber results without force") {
  const fs::path dir = fs::temp_directory_path() / "capnet_stage_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "stage");
  write_file(dir / "stage" / "old.txt", "keep me\n");

  CHECK_THROWS_WITH(prepare_stage_dir(dir / "stage", false),
                    Catch::Matchers::ContainsSubstring("--force"));
  CHECK(fs::exists(dir / "stage" / "old.txt"));

  prepare_stage_dir(dir / "stage", true);
  CHECK(fs::exists(dir / "stage"));
  CHECK_FALSE(fs::exists(dir / "stage" / "old.txt"));

  prepare_stage_dir(dir / "fresh", false);  // creating a new dir needs no force
  CHECK(fs::exists(dir / "fresh"));
  fs::remove_all(dir);
}

TEST_CASE("parallel_for covers every index and propagates failures") {
  CHECK(resolve_jobs(5) == 5);
  CHECK(resolve_jobs(0) >= 1);

  std::atomic<long long> sum{0};
  parallel_for(50, 4, [&](int i) { sum += i; });
  CHECK(sum.load() == 49 * 50 / 2);

  sum = 0;
  parallel_for(8, 1, [&](int i) { sum += i; });
  CHECK(sum.load() == 28);

  CHECK_THROWS_AS(parallel_for(20, 4,
                               [&](int i) {
                                 if (i == 7) throw IoError("disk on fire");
                               }),
                  IoError);
}

namespace {
RunConfig tiny_config(const fs::path& root) {
  RunConfig cfg;
  cfg.master_seed = 7;
  cfg.out = root / "out";
  cfg.n_runs = 4;  // splits to 2/1/1 so every split is exercised
  cfg.years = 4;
  cfg.n_block_groups = 10;
  cfg.max_epochs = 30;
  cfg.patience = 5;
  cfg.checkpoint_every = 10;
  cfg.jobs = 1;
  return cfg;
}
}  // namespace

TEST_CASE("the staged pipeline runs end to end deterministically") {
  const fs::path root = fs::temp_directory_path() / "capnet_pipeline_test";
  fs::remove_all(root);
  RunConfig cfg = tiny_config(root);

  // --- generate ---
  cmd_generate(cfg);
  for (int run = 0; run < cfg.n_runs; ++run) {
    CHECK(fs::exists(agents_path(cfg, run)));
    CHECK(fs::exists(blocks_path(cfg, run)));
    CHECK(fs::exists(scenario_path(cfg, run)));
  }
  const auto manifest = read_lines(raw_dir(cfg) / "manifest.txt");
  REQUIRE(manifest.size() == 1 + 4);
  CHECK(manifest[0] == "run,seed,years,n_block_groups");

  CHECK_THROWS_AS(cmd_generate(cfg), ConfigError);  // refuses to clobber
  const std::string agents0 = read_file(agents_path(cfg, 0));
  cfg.force = true;
  cmd_generate(cfg);
  CHECK(read_file(agents_path(cfg, 0)) == agents0);  // reruns are byte-identical
  cfg.force = false;

  // Scenario files round-trip through the sampler's serialization.
  const ScenarioParams sc = ScenarioParams::parse(read_file(scenario_path(cfg, 2)));
  CHECK(sc.seed == derive_seed(cfg.master_seed, "abm", 2));

  // --- coarsen ---
  cmd_coarsen(cfg);
  std::vector<CoarseTrajectory> runs;
  for (int run = 0; run < cfg.n_runs; ++run) {
    runs.push_back(parse_coarse_csv(read_file(coarse_path(cfg, run)), run));
    CHECK(runs.back().years() == cfg.years);
    CHECK(runs.back().n_nodes() == 4);
  }
  const auto thresholds = read_lines(coarse_dir(cfg) / "thresholds.csv");
  REQUIRE(thresholds.size() == 1 + 4);
  CHECK(thresholds[0] == "run,zone_d1,zone_d2,income_i1,income_i2,people_per_agent");
  for (int run = 1; run <= 4; ++run) {
    const auto f = split(thresholds[run], ',');
    REQUIRE(f.size() == 6);
    const double i1 = parse_double(f[3], "i1");
    const double i2 = parse_double(f[4], "i2");
    CHECK(i1 < i2);  // per-run tertiles stay ordered
  }

  // --- train ---
  const TrainOutcome t = cmd_train(cfg);
  REQUIRE(t.epochs_run >= 1);
  REQUIRE(t.best_epoch >= 0);
  REQUIRE(t.best_epoch < t.epochs_run);

  const auto history = read_lines(train_dir(cfg) / "history.csv");
  REQUIRE(history.size() == static_cast<std::size_t>(1 + t.epochs_run));
  CHECK(history[0] == "epoch,train_loss,val_loss");
  double best_val = 0.0;
  for (int e = 0; e < t.epochs_run; ++e) {
    const auto f = split(history[1 + e], ',');
    REQUIRE(f.size() == 3);
    CHECK(parse_int(f[0], "epoch") == e);
    const double val = parse_double(f[2], "val");
    if (e == 0 || val < best_val) best_val = val;
  }
  CHECK(best_val == t.best_val_loss);

  const EbmParams best = parse_params(read_file(train_dir(cfg) / "best_params.txt"));
  CHECK(best.n_nodes == 4);
  CHECK(fs::exists(train_dir(cfg) / "checkpoints" / "epoch_0.txt"));

  // Same seed, same bytes.
  const std::string history_bytes = read_file(train_dir(cfg) / "history.csv");
  const std::string params_bytes = read_file(train_dir(cfg) / "best_params.txt");
  cfg.force = true;
  cmd_train(cfg);
  CHECK(read_file(train_dir(cfg) / "history.csv") == history_bytes);
  CHECK(read_file(train_dir(cfg) / "best_params.txt") == params_bytes);
  cfg.force = false;

  // --- evaluate ---
  const EvalOutcome ev = cmd_evaluate(cfg);
  CHECK(ev.train.runs.size() == 2);
  CHECK(ev.val.runs.size() == 1);
  CHECK(ev.test.runs.size() == 1);
  const auto summary = read_lines(eval_dir(cfg) / "summary.csv");
  REQUIRE(summary.size() == 4);
  CHECK(summary[0] == "split,mape_mean,mape_best,mape_worst,mae_mean,mae_best,mae_worst");
  const auto exemplars = read_lines(eval_dir(cfg) / "exemplars.csv");
  REQUIRE(exemplars.size() >= 2);
  CHECK(exemplars[0] == "split,tag,run,value");
  for (std::size_t i = 1; i < exemplars.size(); ++i) {
    const auto f = split(exemplars[i], ',');
    REQUIRE(f.size() == 4);
    const int run_id = static_cast<int>(parse_int(f[2], "run"));
    CHECK(fs::exists(eval_dir(cfg) / ("overlay_" + std::to_string(run_id) + ".csv")));
    CHECK(fs::exists(eval_dir(cfg) / ("outmigration_" + std::to_string(run_id) + ".csv")));
  }

  // --- simulate ---
  const fs::path traj_file = root / "trajectory.csv";
  const SimulateOutcome sim = cmd_simulate(train_dir(cfg) / "best_params.txt",
                                           coarse_path(cfg, 0), coarse_path(cfg, 0),
                                           /*steps=*/-1, traj_file);
  CHECK(sim.steps == cfg.years);
  CHECK(sim.median_ms >= 0.0);
  const auto traj_lines = read_lines(traj_file);
  REQUIRE(traj_lines.size() == 1 + static_cast<std::size_t>(cfg.years + 1) * 4 * 3);
  CHECK(traj_lines[0] == "year,node,subpop,count");

  // steps=0 echoes the initial state.
  const SimulateOutcome echo = cmd_simulate(train_dir(cfg) / "best_params.txt",
                                            coarse_path(cfg, 0), coarse_path(cfg, 0), 0,
                                            traj_file);
  CHECK(echo.steps == 0);
  const auto echo_lines = read_lines(traj_file);
  REQUIRE(echo_lines.size() == 1 + 12);
  for (int node = 0; node < 4; ++node) {
    for (int s = 0; s < kSubpops; ++s) {
      const auto f = split(echo_lines[1 + node * 3 + s], ',');
      REQUIRE(f.size() == 4);
      CHECK(parse_double(f[3], "count") == runs[0].states[0][node][s]);
    }
  }

  CHECK_THROWS_AS(cmd_simulate(train_dir(cfg) / "best_params.txt", coarse_path(cfg, 0),
                               coarse_path(cfg, 0), cfg.years + 1, traj_file),
                  ConfigError);

  const fs::path small_params = root / "small_params.txt";
  write_file(small_params, serialize_params(init_params(2, 1)));
  CHECK_THROWS_AS(cmd_simulate(small_params, coarse_path(cfg, 0), coarse_path(cfg, 0), -1,
                               traj_file),
                  ConfigError);

  fs::remove_all(root);
}

TEST_CASE("evaluate refuses to run before training") {
  const fs::path root = fs::temp_directory_path() / "capnet_pipeline_order";
  fs::remove_all(root);
  RunConfig cfg = tiny_config(root);
  cmd_generate(cfg);
  cmd_coarsen(cfg);
  CHECK_THROWS_AS(cmd_evaluate(cfg), IoError);
  fs::remove_all(root);
}

TEST_CASE("gradient verification passes on fresh random instances") {
  const GradCheckOutcome out = cmd_check_grad(7, 3, 1e-5, 1e-4);
  CHECK(out.failures == 0);
  REQUIRE(out.per_instance.size() == 3);
  CHECK(out.max_rel_err < 1e-4);
  for (double e : out.per_instance) CHECK(e <= out.max_rel_err);

  CHECK_THROWS_AS(cmd_check_grad(7, 0, 1e-5, 1e-4), ConfigError);
  CHECK_THROWS_AS(cmd_check_grad(7, 1, 0.0, 1e-4), ConfigError);
  CHECK_THROWS_AS(cmd_check_grad(7, 1, 1e-5, 0.0), ConfigError);
}
