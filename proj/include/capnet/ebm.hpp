#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "capnet/csv.hpp"
#include "capnet/errors.hpp"
#include "capnet/graph.hpp"
#include "capnet/rng.hpp"

namespace capnet {

/// Feature vector per node: mixture fractions (3) + pressure (1) + latent q (1).
inline constexpr int kFeatureDim = 5;
using FeatVec = std::array<double, kFeatureDim>;

struct EbmConfig {
  int n_nodes = 4;
  double dt = 1.0;  // years per Euler step
  /// false: beta's availability factor is (1 - sum(x_j)/C_j).
  /// true:  literal reading (1 - sum(x_j))/C_j, kept for comparison.
  bool beta_literal = false;

  void validate() const {
    if (n_nodes < 1) throw ConfigError("n_nodes must be positive");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  }
};

/// Flat parameter block: three MLP layers then one latent scalar per node.
/// Layout (row-major weights, output index major):
///   [0,25)   layer-1 weights 5x5     [25,30) layer-1 bias
///   [30,55)  layer-2 weights 5x5     [55,60) layer-2 bias
///   [60,75)  layer-3 weights 3x5     [75,78) layer-3 bias
///   [78,78+n) latent q by node index
struct EbmParams {
  static constexpr int kW1 = 0;
  static constexpr int kB1 = 25;
  static constexpr int kW2 = 30;
  static constexpr int kB2 = 55;
  static constexpr int kW3 = 60;
  static constexpr int kB3 = 75;
  static constexpr int kQ = 78;
  static constexpr int kMlpCount = 78;

  int n_nodes = 0;
  std::vector<double> v;

  EbmParams() = default;
  explicit EbmParams(int nodes) : n_nodes(nodes), v(kMlpCount + nodes, 0.0) {}

  double q(int node) const { return v[kQ + node]; }
  int size() const { return static_cast<int>(v.size()); }

  bool finite() const {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }
};

inline int mlp_param_count() { return EbmParams::kMlpCount; }

inline int param_count(int n_nodes) { return EbmParams::kMlpCount + n_nodes; }

inline int param_count(const EbmConfig& cfg) { return param_count(cfg.n_nodes); }

/// Glorot-uniform MLP weights, zero biases, zero latent q.
inline EbmParams init_params(int n_nodes, std::uint64_t seed) {
  EbmParams p(n_nodes);
  Rng rng(seed);
  const auto fill = [&](int offset, int rows, int cols) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    for (int k = 0; k < rows * cols; ++k) p.v[offset + k] = rng.uniform(-bound, bound);
  };
  fill(EbmParams::kW1, 5, 5);
  fill(EbmParams::kW2, 5, 5);
  fill(EbmParams::kW3, 3, 5);
  return p;
}

inline constexpr std::string_view kParamsFormatTag = "ebm_params_v1";

inline std::string serialize_params(const EbmParams& p) {
  std::string out(kParamsFormatTag);
  out += ' ';
  out += std::to_string(p.n_nodes);
  out += '\n';
  for (double x : p.v) {
    out += format_double(x);
    out += '\n';
  }
  return out;
}

inline EbmParams parse_params(const std::string& text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string::npos) pos = text.size();
    const auto line = trim(std::string_view(text).substr(start, pos - start));
    if (!line.empty()) lines.push_back(line);
    start = pos + 1;
  }
  if (lines.empty()) throw IoError("empty parameter text");
  const auto header = split(lines[0], ' ');
  if (header.size() != 2 || trim(header[0]) != kParamsFormatTag) {
    throw IoError("bad parameter header: expected '" + std::string(kParamsFormatTag) +
                  " <n_nodes>'");
  }
  const int n_nodes = static_cast<int>(parse_int(trim(header[1]), "parameter header"));
  if (n_nodes < 1) throw IoError("parameter header has nonpositive n_nodes");
  EbmParams p(n_nodes);
  if (lines.size() != static_cast<std::size_t>(p.size()) + 1) {
    throw IoError("expected " + std::to_string(p.size()) + " parameter lines, got " +
                  std::to_string(lines.size() - 1));
  }
  for (int i = 0; i < p.size(); ++i) p.v[i] = parse_double(lines[i + 1], "parameter line");
  return p;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double swish(double z) { return z * sigmoid(z); }

/// d/dz swish(z) = sigma(z) * (1 + z * (1 - sigma(z))).
inline double swish_grad(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

/// Total occupancy over capacity.
inline double pressure(const NodeVec& x, double C) {
  if (!(C > 0.0)) throw ConfigError("pressure: capacity must be positive");
  return (x[0] + x[1] + x[2]) / C;
}

/// y = x/C (3) + pressure (1) + latent q (1).
inline FeatVec features(const NodeVec& x, double C, double q) {
  if (!(C > 0.0)) throw ConfigError("features: capacity must be positive");
  return {x[0] / C, x[1] / C, x[2] / C, (x[0] + x[1] + x[2]) / C, q};
}

/// Availability factor of the flux scaling at the j side. Both readings share
/// d(avail)/d(x_j[r]) = -1/C_j, which the backward pass relies on.
inline double beta_avail(const NodeVec& xj, double Cj, bool literal) {
  const double occ = xj[0] + xj[1] + xj[2];
  return literal ? (1.0 - occ) / Cj : 1.0 - occ / Cj;
}

/// beta[s] = (x_i[s]/C_i) * avail_j. Zero when the i side is empty or the j
/// side is full (default reading).
inline NodeVec beta(const NodeVec& xi, const NodeVec& xj, double Ci, double Cj,
                    bool literal = false) {
  if (!(Ci > 0.0) || !(Cj > 0.0)) throw ConfigError("beta: capacities must be positive");
  const double avail = beta_avail(xj, Cj, literal);
  return {xi[0] / Ci * avail, xi[1] / Ci * avail, xi[2] / Ci * avail};
}

/// Forward MLP evaluation with every intermediate kept for the backward pass.
struct MlpTrace {
  FeatVec in;
  std::array<double, 5> z1, h1, z2, h2;
  NodeVec out;
};

inline MlpTrace phi_mlp_trace(const FeatVec& dy, const EbmParams& p) {
  MlpTrace t;
  t.in = dy;
  const double* w1 = p.v.data() + EbmParams::kW1;
  const double* b1 = p.v.data() + EbmParams::kB1;
  const double* w2 = p.v.data() + EbmParams::kW2;
  const double* b2 = p.v.data() + EbmParams::kB2;
  const double* w3 = p.v.data() + EbmParams::kW3;
  const double* b3 = p.v.data() + EbmParams::kB3;
  for (int r = 0; r < 5; ++r) {
    double z = b1[r];
    for (int c = 0; c < 5; ++c) z += w1[r * 5 + c] * dy[c];
    t.z1[r] = z;
    t.h1[r] = swish(z);
  }
  for (int r = 0; r < 5; ++r) {
    double z = b2[r];
    for (int c = 0; c < 5; ++c) z += w2[r * 5 + c] * t.h1[c];
    t.z2[r] = z;
    t.h2[r] = swish(z);
  }
  for (int r = 0; r < 3; ++r) {
    double z = b3[r];
    for (int c = 0; c < 5; ++c) z += w3[r * 5 + c] * t.h2[c];
    t.out[r] = z;
  }
  return t;
}

/// Closure network: 5 -> 5 swish -> 5 swish -> 3 linear.
inline NodeVec phi_mlp(const FeatVec& dy, const EbmParams& p) {
  return phi_mlp_trace(dy, p).out;
}

/// dx_i/dt: flux summed over neighbors plus exogenous growth minus decay.
inline NodeVec node_rhs(int i, const SystemState& X, const std::vector<FeatVec>& Y,
                        const std::vector<double>& C, const NodeVec& g_i, const NodeVec& d_i,
                        const RegionGraph& graph, const EbmParams& params,
                        bool beta_literal = false) {
  const int n = graph.size();
  if (static_cast<int>(X.size()) != n || static_cast<int>(Y.size()) != n ||
      static_cast<int>(C.size()) != n || params.n_nodes != n) {
    throw ConfigError("node_rhs: dimension mismatch");
  }
  if (i < 0 || i >= n) throw ConfigError("node_rhs: node index out of range");
  NodeVec f{0.0, 0.0, 0.0};
  for (int j = 0; j < n; ++j) {
    if (!graph.edge(i, j)) continue;
    FeatVec dy;
    for (int k = 0; k < kFeatureDim; ++k) dy[k] = Y[j][k] - Y[i][k];
    const NodeVec o = phi_mlp(dy, params);
    const NodeVec b = beta(X[i], X[j], C[i], C[j], beta_literal);
    for (int s = 0; s < kSubpops; ++s) f[s] += o[s] * b[s];
  }
  for (int s = 0; s < kSubpops; ++s) f[s] += g_i[s] - d_i[s];
  return f;
}

/// Stacked node_rhs over all nodes, with features recomputed from X and C(t).
inline SystemState system_rhs(const SystemState& X, int t, const ExogenousSeries& exo,
                              const RegionGraph& graph, const EbmParams& params,
                              const EbmConfig& cfg) {
  const int n = graph.size();
  if (static_cast<int>(X.size()) != n) throw ConfigError("system_rhs: state size mismatch");
  if (t < 0 || t >= exo.steps()) throw ConfigError("system_rhs: step index outside series");
  static const NodeVec kZero{0.0, 0.0, 0.0};
  const auto& C = exo.capacity[t];
  std::vector<FeatVec> Y(n);
  for (int v = 0; v < n; ++v) Y[v] = features(X[v], C[v], params.q(v));
  SystemState F(n);
  for (int i = 0; i < n; ++i) {
    const NodeVec& d_i = exo.decay.empty() ? kZero : exo.decay[t][i];
    F[i] = node_rhs(i, X, Y, C, exo.growth[t][i], d_i, graph, params, cfg.beta_literal);
  }
  return F;
}

/// Explicit Euler: X^(k+1) = X^k + dt * F(X^k, t_k). Returns N+1 states, the
/// first being X0 unchanged.
inline std::vector<SystemState> euler_rollout(const SystemState& X0, const EbmParams& params,
                                              const ExogenousSeries& exo,
                                              const RegionGraph& graph, const EbmConfig& cfg,
                                              int N) {
  const int n = graph.size();
  cfg.validate();
  if (N < 0) throw ConfigError("euler_rollout: negative step count");
  if (exo.steps() < N) throw ConfigError("euler_rollout: exogenous series shorter than rollout");
  exo.validate(n);
  if (static_cast<int>(X0.size()) != n) throw ConfigError("euler_rollout: X0 size mismatch");
  std::vector<SystemState> traj;
  traj.reserve(N + 1);
  traj.push_back(X0);
  for (int k = 0; k < N; ++k) {
    const SystemState F = system_rhs(traj.back(), k, exo, graph, params, cfg);
    SystemState next = traj.back();
    for (int v = 0; v < n; ++v) {
      for (int s = 0; s < kSubpops; ++s) {
        next[v][s] += cfg.dt * F[v][s];
        if (!std::isfinite(next[v][s])) {
          throw DivergedError("non-finite state at step " + std::to_string(k + 1), k + 1);
        }
      }
    }
    traj.push_back(std::move(next));
  }
  return traj;
}

}  // namespace capnet
