// Command-line entry point: generate -> coarsen -> train -> evaluate, plus
// standalone simulation and gradient verification.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "capnet/config.hpp"
#include "capnet/errors.hpp"
#include "capnet/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitIo = 3;

void print_summary_line(const char* name, const capnet::EvalSummary& s) {
  const auto fmt = [](const std::optional<capnet::MetricAggregate>& agg) {
    if (!agg) return std::string("n/a");
    char buf[128];
    std::snprintf(buf, sizeof(buf), "mean %.3f best %.3f worst %.3f", agg->mean, agg->best,
                  agg->worst);
    return std::string(buf);
  };
  std::printf("%-5s  runs %2zu  mape%% [%s]  mae(people) [%s]\n", name, s.runs.size(),
              fmt(s.mape_agg).c_str(), fmt(s.mae_agg).c_str());
  if (!s.excluded_runs.empty()) {
    std::printf("%-5s  diverged runs excluded:", name);
    for (int r : s.excluded_runs) std::printf(" %d", r);
    std::printf("\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-grained housing-dynamics pipeline"};
  app.require_subcommand(1);

  std::string config_file;
  app.add_option("--config", config_file, "key=value configuration file");
  bool force = false;
  app.add_flag("--force", force, "overwrite non-empty stage output directories");

  // Every config key doubles as a flag; flags win over the config file.
  const std::vector<std::string> keys = {
      "out",        "n_runs",        "years",         "n_block_groups",   "topology",
      "edges",      "zone_d1",       "zone_d2",       "income_mode",      "income_i1",
      "income_i2",  "people_per_agent", "dt",         "beta_literal",     "learning_rate",
      "patience",   "max_epochs",    "checkpoint_every", "train_frac",    "val_frac",
      "test_frac",  "mape_floor",    "jobs"};
  std::map<std::string, std::string> raw;
  for (const auto& k : keys) app.add_option("--" + k, raw[k]);
  std::string seed_value;
  app.add_option("--master_seed,--seed", seed_value, "master seed for every stage");

  auto* generate = app.add_subcommand("generate", "simulate the scenario ensemble");
  auto* coarsen = app.add_subcommand("coarsen", "aggregate runs onto the coarse graph");
  auto* train = app.add_subcommand("train", "fit the closure network");
  auto* evaluate = app.add_subcommand("evaluate", "metrics and exemplar exports per split");

  auto* simulate = app.add_subcommand("simulate", "roll the trained model forward");
  std::string sim_params, sim_x0, sim_exo, sim_out = "trajectory.csv";
  int sim_steps = -1;
  simulate->add_option("--params", sim_params, "parameter file")->required();
  simulate->add_option("--x0", sim_x0, "coarse CSV supplying the year-0 state")->required();
  simulate->add_option("--exogenous", sim_exo, "coarse CSV supplying G and C")->required();
  simulate->add_option("--steps", sim_steps, "steps to roll (default: full series)");
  simulate->add_option("--trajectory-out", sim_out, "output trajectory CSV");

  auto* check_grad = app.add_subcommand("check-grad", "finite-difference gradient check");
  int cg_instances = 20;
  double cg_eps = 1e-5;
  double cg_tolerance = 1e-4;
  check_grad->add_option("--instances", cg_instances, "random instances to test");
  check_grad->add_option("--eps", cg_eps, "finite-difference step");
  check_grad->add_option("--tolerance", cg_tolerance, "max relative error allowed");

  // Global options are accepted after the subcommand name as well.
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    capnet::RunConfig cfg;
    if (!config_file.empty()) capnet::load_config_file(cfg, config_file);
    for (const auto& k : keys) {
      if (app.count("--" + k) > 0) capnet::apply_config_entry(cfg, k, raw[k]);
    }
    if (app.count("--master_seed") > 0) {
      capnet::apply_config_entry(cfg, "master_seed", seed_value);
    }
    cfg.force = force;
    cfg.validate();

    if (*generate) {
      capnet::cmd_generate(cfg);
      std::printf("wrote %d runs to %s\n", cfg.n_runs, capnet::raw_dir(cfg).string().c_str());
    } else if (*coarsen) {
      capnet::cmd_coarsen(cfg);
      std::printf("wrote %d coarse runs to %s\n", cfg.n_runs,
                  capnet::coarse_dir(cfg).string().c_str());
    } else if (*train) {
      const auto outcome = capnet::cmd_train(cfg);
      std::printf("best epoch %d  val loss %.6g  (%d epochs run)\n", outcome.best_epoch,
                  outcome.best_val_loss, outcome.epochs_run);
    } else if (*evaluate) {
      const auto outcome = capnet::cmd_evaluate(cfg);
      print_summary_line("train", outcome.train);
      print_summary_line("val", outcome.val);
      print_summary_line("test", outcome.test);
      std::printf("summary written to %s\n",
                  (capnet::eval_dir(cfg) / "summary.csv").string().c_str());
    } else if (*simulate) {
      const auto outcome = capnet::cmd_simulate(sim_params, sim_x0, sim_exo, sim_steps, sim_out,
                                                cfg.beta_literal, cfg.dt);
      std::printf("rolled %d steps; median rollout time %.3f ms over 100 repetitions\n",
                  outcome.steps, outcome.median_ms);
      std::printf("trajectory written to %s\n", sim_out.c_str());
    } else if (*check_grad) {
      const auto outcome =
          capnet::cmd_check_grad(cfg.master_seed, cg_instances, cg_eps, cg_tolerance);
      for (std::size_t i = 0; i < outcome.per_instance.size(); ++i) {
        std::printf("instance %zu: max relative error %.3e\n", i, outcome.per_instance[i]);
      }
      std::printf("max relative error %.3e over %d instances (tolerance %.1e)\n",
                  outcome.max_rel_err, cg_instances, cg_tolerance);
      if (outcome.failures > 0) {
        std::fprintf(stderr, "gradient check FAILED on %d instance(s)\n", outcome.failures);
        return kExitDiverged;
      }
      std::printf("gradient check passed\n");
    }
    return kExitOk;
  } catch (const capnet::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const capnet::DivergedError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kExitDiverged;
  } catch (const capnet::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
}
