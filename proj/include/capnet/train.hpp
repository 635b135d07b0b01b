#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "capnet/coarsen.hpp"
#include "capnet/ebm.hpp"
#include "capnet/errors.hpp"
#include "capnet/graph.hpp"
#include "capnet/rng.hpp"

namespace capnet {

/// Sum of squared entry differences over all timesteps.
inline double trajectory_loss(const std::vector<SystemState>& predicted,
                              const std::vector<SystemState>& observed) {
  if (predicted.size() != observed.size()) {
    throw ConfigError("trajectory_loss: length mismatch");
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    if (predicted[k].size() != observed[k].size()) {
      throw ConfigError("trajectory_loss: state size mismatch");
    }
    for (std::size_t v = 0; v < predicted[k].size(); ++v) {
      for (int s = 0; s < kSubpops; ++s) {
        const double d = predicted[k][v][s] - observed[k][v][s];
        loss += d * d;
      }
    }
  }
  return loss;
}

/// Vector-Jacobian product of the network dynamics at one state. U is the
/// upstream cotangent of the rhs output (dt already folded in by the caller).
/// Parameter contributions accumulate into gparams; the return value is
/// dF/dX^T U. Per-edge primal traces are recomputed rather than stored.
inline SystemState system_rhs_vjp(const SystemState& X, const std::vector<double>& C,
                                  const RegionGraph& graph, const EbmParams& params,
                                  bool beta_literal, const SystemState& U,
                                  std::vector<double>& gparams) {
  const int n = graph.size();
  const double* w1 = params.v.data() + EbmParams::kW1;
  const double* w2 = params.v.data() + EbmParams::kW2;
  const double* w3 = params.v.data() + EbmParams::kW3;
  double* gw1 = gparams.data() + EbmParams::kW1;
  double* gb1 = gparams.data() + EbmParams::kB1;
  double* gw2 = gparams.data() + EbmParams::kW2;
  double* gb2 = gparams.data() + EbmParams::kB2;
  double* gw3 = gparams.data() + EbmParams::kW3;
  double* gb3 = gparams.data() + EbmParams::kB3;

  std::vector<FeatVec> Y(n);
  for (int v = 0; v < n; ++v) Y[v] = features(X[v], C[v], params.q(v));
  SystemState gX(n, NodeVec{0.0, 0.0, 0.0});
  std::vector<FeatVec> gY(n, FeatVec{0.0, 0.0, 0.0, 0.0, 0.0});

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (!graph.edge(i, j)) continue;
      FeatVec dy;
      for (int k = 0; k < kFeatureDim; ++k) dy[k] = Y[j][k] - Y[i][k];
      const MlpTrace t = phi_mlp_trace(dy, params);
      const double avail = beta_avail(X[j], C[j], beta_literal);

      // flux[s] = out[s] * (X[i][s]/C[i]) * avail, upstream U[i][s].
      NodeVec g_o, g_b;
      for (int s = 0; s < kSubpops; ++s) {
        const double b = X[i][s] / C[i] * avail;
        g_o[s] = U[i][s] * b;
        g_b[s] = U[i][s] * t.out[s];
      }
      // d(beta[s])/d(X[i][s]) = avail/C_i; d(avail)/d(X[j][r]) = -1/C_j.
      double tsum = 0.0;
      for (int s = 0; s < kSubpops; ++s) {
        gX[i][s] += g_b[s] * avail / C[i];
        tsum += g_b[s] * X[i][s];
      }
      const double spread = tsum / (C[i] * C[j]);
      for (int r = 0; r < kSubpops; ++r) gX[j][r] -= spread;

      // MLP backward.
      double g_h2[5] = {0, 0, 0, 0, 0};
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 5; ++c) {
          gw3[r * 5 + c] += g_o[r] * t.h2[c];
          g_h2[c] += w3[r * 5 + c] * g_o[r];
        }
        gb3[r] += g_o[r];
      }
      double g_z2[5];
      for (int r = 0; r < 5; ++r) g_z2[r] = g_h2[r] * swish_grad(t.z2[r]);
      double g_h1[5] = {0, 0, 0, 0, 0};
      for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 5; ++c) {
          gw2[r * 5 + c] += g_z2[r] * t.h1[c];
          g_h1[c] += w2[r * 5 + c] * g_z2[r];
        }
        gb2[r] += g_z2[r];
      }
      double g_z1[5];
      for (int r = 0; r < 5; ++r) g_z1[r] = g_h1[r] * swish_grad(t.z1[r]);
      FeatVec g_d{0.0, 0.0, 0.0, 0.0, 0.0};
      for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 5; ++c) {
          gw1[r * 5 + c] += g_z1[r] * t.in[c];
          g_d[c] += w1[r * 5 + c] * g_z1[r];
        }
        gb1[r] += g_z1[r];
      }
      for (int k = 0; k < kFeatureDim; ++k) {
        gY[j][k] += g_d[k];
        gY[i][k] -= g_d[k];
      }
    }
  }
  // y[s] = X[s]/C, y[3] = sum(X)/C, y[4] = q.
  for (int v = 0; v < n; ++v) {
    for (int s = 0; s < kSubpops; ++s) gX[v][s] += (gY[v][s] + gY[v][3]) / C[v];
    gparams[EbmParams::kQ + v] += gY[v][4];
  }
  return gX;
}

/// Forward rollout plus adjoint sweep for one run. Reverse accumulation:
///   a_N = 2 (Xhat^N - X^N)
///   a_k = a_{k+1} + dt * dF/dX^T a_{k+1} + 2 (Xhat^k - X^k)   (k >= 1)
///   dL/dtheta += dt * dF/dtheta^T a_{k+1} at each step.
struct GradientTape {
  std::vector<SystemState> states;  // recorded primal trajectory
  SystemState adjoint;
  double loss = 0.0;
};

inline double run_grad(const EbmParams& params, const CoarseTrajectory& run,
                       const RegionGraph& graph, const EbmConfig& cfg,
                       std::vector<double>& gparams) {
  const int n = graph.size();
  const int N = run.years();
  const ExogenousSeries exo = run.exogenous();
  GradientTape tape;
  tape.states = euler_rollout(run.states[0], params, exo, graph, cfg, N);
  for (int k = 1; k <= N; ++k) {
    for (int v = 0; v < n; ++v) {
      for (int s = 0; s < kSubpops; ++s) {
        const double d = tape.states[k][v][s] - run.states[k][v][s];
        tape.loss += d * d;
      }
    }
  }
  if (N == 0) return tape.loss;

  tape.adjoint.assign(n, NodeVec{0.0, 0.0, 0.0});
  for (int v = 0; v < n; ++v) {
    for (int s = 0; s < kSubpops; ++s) {
      tape.adjoint[v][s] = 2.0 * (tape.states[N][v][s] - run.states[N][v][s]);
    }
  }
  SystemState U(n);
  for (int k = N - 1; k >= 0; --k) {
    for (int v = 0; v < n; ++v) {
      for (int s = 0; s < kSubpops; ++s) U[v][s] = cfg.dt * tape.adjoint[v][s];
    }
    const SystemState gX = system_rhs_vjp(tape.states[k], exo.capacity[k], graph, params,
                                          cfg.beta_literal, U, gparams);
    for (int v = 0; v < n; ++v) {
      for (int s = 0; s < kSubpops; ++s) {
        tape.adjoint[v][s] += gX[v][s];
        if (k >= 1) {
          tape.adjoint[v][s] += 2.0 * (tape.states[k][v][s] - run.states[k][v][s]);
        }
      }
    }
  }
  return tape.loss;
}

struct GradResult {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Exact reverse-mode gradient of the summed loss over the batch. Runs are
/// reduced in batch order, so the result is deterministic.
inline GradResult grad(const EbmParams& params, const std::vector<CoarseTrajectory>& batch,
                       const RegionGraph& graph, const EbmConfig& cfg) {
  if (batch.empty()) throw ConfigError("grad: empty batch");
  GradResult out;
  out.grad.assign(params.size(), 0.0);
  for (const auto& run : batch) {
    out.loss += run_grad(params, run, graph, cfg, out.grad);
  }
  for (double g : out.grad) {
    if (!std::isfinite(g)) throw DivergedError("non-finite gradient");
  }
  if (!std::isfinite(out.loss)) throw DivergedError("non-finite loss");
  return out;
}

/// Summed trajectory loss of fresh rollouts over a set of runs.
inline double dataset_loss(const EbmParams& params, const std::vector<CoarseTrajectory>& runs,
                           const RegionGraph& graph, const EbmConfig& cfg) {
  double loss = 0.0;
  for (const auto& run : runs) {
    const auto traj =
        euler_rollout(run.states[0], params, run.exogenous(), graph, cfg, run.years());
    loss += trajectory_loss(traj, run.states);
  }
  return loss;
}

struct AdamState {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<double> m, v;

  explicit AdamState(int n_params, double lr = 0.01)
      : learning_rate(lr), m(n_params, 0.0), v(n_params, 0.0) {}
};

/// Standard Adam update with bias correction.
inline void adam_step(EbmParams& params, const std::vector<double>& g, AdamState& st) {
  if (g.size() != params.v.size() || st.m.size() != params.v.size()) {
    throw ConfigError("adam_step: shape mismatch");
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.v.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g[i] * g[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params.v[i] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.eps);
  }
}

struct TrainOptions {
  double learning_rate = 0.01;
  int patience = 100;
  int max_epochs = 20000;
};

struct TrainReport {
  std::vector<double> train_losses;  // loss at the params entering each epoch
  std::vector<double> val_losses;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  EbmParams best_params;
  int epochs_run = 0;
};

/// Full-batch epochs with validation every epoch; stops once validation has
/// not improved for more than `patience` epochs and returns the parameters of
/// the best validation epoch. The callback sees (epoch, params, train_loss,
/// val_loss) before each update and may be a no-op.
template <typename Callback>
TrainReport train(const std::vector<CoarseTrajectory>& train_set,
                  const std::vector<CoarseTrajectory>& val_set, const RegionGraph& graph,
                  const EbmConfig& cfg, const TrainOptions& opts, std::uint64_t seed,
                  Callback&& callback) {
  if (train_set.empty() || val_set.empty()) {
    throw ConfigError("train: train and validation sets must be nonempty");
  }
  if (opts.patience < 0 || opts.max_epochs < 1) {
    throw ConfigError("train: patience must be >= 0 and max_epochs >= 1");
  }
  EbmParams params = init_params(graph.size(), seed);
  AdamState adam(params.size(), opts.learning_rate);
  TrainReport report;
  report.best_params = params;
  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    GradResult gr;
    double val = 0.0;
    try {
      gr = grad(params, train_set, graph, cfg);
      val = dataset_loss(params, val_set, graph, cfg);
    } catch (const DivergedError& e) {
      throw DivergedError("epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
    }
    if (!std::isfinite(val)) {
      throw DivergedError("epoch " + std::to_string(epoch) + ": non-finite validation loss",
                          epoch);
    }
    report.train_losses.push_back(gr.loss);
    report.val_losses.push_back(val);
    report.epochs_run = epoch + 1;
    if (val < report.best_val_loss) {
      report.best_val_loss = val;
      report.best_epoch = epoch;
      report.best_params = params;
    }
    callback(epoch, params, gr.loss, val);
    if (epoch - report.best_epoch > opts.patience) break;
    adam_step(params, gr.grad, adam);
  }
  return report;
}

inline TrainReport train(const std::vector<CoarseTrajectory>& train_set,
                         const std::vector<CoarseTrajectory>& val_set, const RegionGraph& graph,
                         const EbmConfig& cfg, const TrainOptions& opts, std::uint64_t seed) {
  return train(train_set, val_set, graph, cfg, opts, seed,
               [](int, const EbmParams&, double, double) {});
}

/// Relative-error floor: coordinates where both gradients are below this are
/// effectively held to an absolute tolerance of floor x threshold.
inline constexpr double kGradCheckDenomFloor = 1e-3;

/// Max relative discrepancy between the reverse-mode gradient and central
/// finite differences over every parameter coordinate.
inline double finite_diff_check(const EbmParams& params, const CoarseTrajectory& probe,
                                const RegionGraph& graph, const EbmConfig& cfg, double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be positive");
  const ExogenousSeries exo = probe.exogenous();
  const auto loss_at = [&](const EbmParams& p) {
    const auto traj = euler_rollout(probe.states[0], p, exo, graph, cfg, probe.years());
    return trajectory_loss(traj, probe.states);
  };
  const GradResult analytic = grad(params, {probe}, graph, cfg);
  double max_rel = 0.0;
  EbmParams perturbed = params;
  for (int i = 0; i < params.size(); ++i) {
    perturbed.v[i] = params.v[i] + eps;
    const double lp = loss_at(perturbed);
    perturbed.v[i] = params.v[i] - eps;
    const double lm = loss_at(perturbed);
    perturbed.v[i] = params.v[i];
    const double fd = (lp - lm) / (2.0 * eps);
    const double denom =
        std::max({std::abs(analytic.grad[i]), std::abs(fd), kGradCheckDenomFloor});
    max_rel = std::max(max_rel, std::abs(analytic.grad[i] - fd) / denom);
  }
  return max_rel;
}

struct GradCheckInstance {
  RegionGraph graph;
  EbmConfig cfg;
  EbmParams params;
  CoarseTrajectory probe;
};

/// Random small instance for gradient verification: 2-4 nodes, 5-10 steps,
/// random dense-ish topology, states and capacities of order one so the
/// finite-difference comparison stays well conditioned. The observed states
/// come from a perturbed-parameter rollout, giving a nonzero loss.
inline GradCheckInstance make_grad_check_instance(std::uint64_t seed) {
  Rng rng(seed);
  GradCheckInstance inst;
  const int n = rng.uniform_int(2, 4);
  const int N = rng.uniform_int(5, 10);
  std::vector<std::string> labels;
  for (int v = 0; v < n; ++v) labels.push_back("n" + std::to_string(v));
  std::vector<std::uint8_t> adj(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng.bernoulli(0.7)) adj[i * n + j] = adj[j * n + i] = 1;
    }
  }
  inst.graph = RegionGraph(std::move(labels), std::move(adj));
  inst.cfg.n_nodes = n;
  inst.cfg.dt = 1.0;

  inst.params = EbmParams(n);
  for (auto& x : inst.params.v) x = 0.6 * rng.normal();

  std::vector<double> C(n);
  for (auto& c : C) c = rng.uniform(5.0, 15.0);
  SystemState X0(n);
  for (int v = 0; v < n; ++v) {
    for (int s = 0; s < kSubpops; ++s) X0[v][s] = rng.uniform(0.0, C[v] / 4.0);
  }
  ExogenousSeries exo;
  exo.growth.assign(N, SystemState(n, NodeVec{0.0, 0.0, 0.0}));
  exo.capacity.assign(N, C);
  for (auto& g : exo.growth) {
    for (auto& node : g) {
      for (auto& x : node) x = rng.uniform(0.0, 0.3);
    }
  }
  EbmParams target = inst.params;
  for (auto& x : target.v) x += 0.1 * rng.normal();
  inst.probe.run_id = 0;
  inst.probe.states = euler_rollout(X0, target, exo, inst.graph, inst.cfg, N);
  inst.probe.growth = exo.growth;
  inst.probe.capacity.assign(N + 1, C);
  return inst;
}

}  // namespace capnet
