#pragma once

// Decentralized Riemannian gradient descent ascent with gradient tracking.
//
// Every node i keeps (x_i, y_i, u_i, v_i) where u_i, v_i track the network
// average of the local x- and y-gradients. One synchronous round:
//
//   w_i   = P_{T x_i}(u_i)
//   x_i'  = R_{x_i}( P_{T x_i}(alpha * sum_j W^k_ij x_j) - beta * w_i )
//   y_i'  = P_Y( sum_j W^k_ij y_j + eta * v_i )
//   u_i'  = sum_j W^k_ij u_j + grad_x f_i(x_i', y_i') - grad_x f_i(x_i, y_i)
//   v_i'  = sum_j W^p_ij v_j + grad_y f_i(x_i', y_i') - grad_y f_i(x_i, y_i)
//
// with p = k by default. The stochastic variant evaluates the new gradients on
// a fresh mini-batch and subtracts the cached gradients of the previous batch.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dstiefel/manifold.hpp"
#include "dstiefel/metrics.hpp"
#include "dstiefel/network.hpp"
#include "dstiefel/problems.hpp"

namespace dstiefel {

enum class Mode { kDrgda, kDrsgda, kCentralized, kDrcsConsensusOnly };

Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

/// Rounds used when mixing the y-gradient tracker.
enum class VMixing { kSameAsK, kSingleRound };

struct SolverConfig {
  double alpha = 0.5;  // consensus step, (0, 1]
  double beta = 0.01;  // primal step
  double eta = 0.1;    // dual step
  int k = 1;           // communication rounds per mixing step
  int iterations = 100;
  std::size_t batch_size = 1;  // stochastic mode only
  bool project_dual = true;
  VMixing v_mixing = VMixing::kSameAsK;
  std::uint64_t seed = 0;
  /// Norm of the per-node tangent perturbation applied to the common start.
  double init_perturbation = 0.0;
  /// L in the metric's dual-gap term.
  double metric_weight = 1.0;
  double divergence_threshold = 1e6;
  bool record_timing = false;

  int v_power() const noexcept { return v_mixing == VMixing::kSameAsK ? k : 1; }
  /// Throws ConfigError on structural violations: alpha outside (0, 1],
  /// beta < 0, eta <= 0, k < 1, iterations < 1.
  void check() const;
};

struct NodeState {
  StiefelPoint x;
  Matrix y;
  Matrix u;       // x-gradient tracker (ambient)
  Matrix v;       // y-gradient tracker
  Matrix grad_x;  // Riemannian gradient at (x, y) on `batch`
  Matrix grad_y;  // Euclidean y-gradient at (x, y) on `batch`
  std::vector<std::size_t> batch;
};

/// Uniform draw of min(q, m) distinct sample indices, returned sorted; q >= m
/// yields the full batch {0, ..., m-1}.
std::vector<std::size_t> draw_batch(std::size_t sample_count, std::size_t q, std::mt19937_64& rng);

/// Common start (polar factor of a Gaussian draw from `cfg.seed`), optional
/// per-node tangent perturbation, y = P_Y(0), trackers set to the initial
/// gradients. `batch_rng` is only consulted in stochastic mode.
std::vector<NodeState> initialize_states(const MinimaxProblem& problem, const SolverConfig& cfg, Mode mode,
                                         std::mt19937_64& batch_rng);

std::vector<NodeState> drgda_step(const std::vector<NodeState>& states, const MinimaxProblem& problem,
                                  const MixingMatrix& w, const SolverConfig& cfg);

std::vector<NodeState> drsgda_step(const std::vector<NodeState>& states, const MinimaxProblem& problem,
                                   const MixingMatrix& w, const SolverConfig& cfg, std::mt19937_64& rng);

/// x_i' = R_{x_i}( P_{T x_i}(alpha * sum_j W^k_ij x_j) ); y and trackers unchanged.
std::vector<NodeState> drcs_step(const std::vector<NodeState>& states, const MixingMatrix& w,
                                 const SolverConfig& cfg);

/// Single-node Riemannian GDA on the global objective:
/// x' = R_x(-beta grad_x F(x, y)), y' = P_Y(y + eta grad_y F(x, y)).
NodeState centralized_step(const NodeState& state, const MinimaxProblem& problem, const SolverConfig& cfg);

struct TraceRecord {
  int t = 0;
  MetricValue metric;
  double x_consensus_l2 = 0.0;
  double x_consensus_linf = 0.0;
  double y_consensus_l2 = 0.0;
  double tracker_drift_u = 0.0;  // ||mean u - mean grad_x||
  double tracker_drift_v = 0.0;  // ||mean v - mean grad_y||
  double mean_node_grad_norm = 0.0;  // ||mean_i grad_x f_i(x_i, y_i)||
  double phi_hat = 0.0;
  long long comms = 0;  // cumulative communication rounds
  double wall_ms = 0.0;
};

struct RunResult {
  std::vector<TraceRecord> records;
  /// Set when the run stopped early (divergence, singular mean, non-finite state).
  std::optional<std::string> error;
  std::vector<NodeState> final_states;
  /// Largest ||grad_x f_i|| observed along the run.
  double empirical_gradient_bound = 0.0;
};

/// Runs `cfg.iterations` recorded iterations (records t = 0 .. T-1; T-1
/// updates). Centralized mode ignores `w` and works on the global objective.
RunResult run(const MinimaxProblem& problem, const MixingMatrix& w, const SolverConfig& cfg, Mode mode);

/// Communication rounds spent by one iteration of `mode`.
long long rounds_per_iteration(Mode mode, const SolverConfig& cfg);

}  // namespace dstiefel
