#include "dstiefel/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "dstiefel/errors.hpp"

namespace dstiefel {

Mode parse_mode(const std::string& name) {
  if (name == "drgda") return Mode::kDrgda;
  if (name == "drsgda") return Mode::kDrsgda;
  if (name == "centralized") return Mode::kCentralized;
  if (name == "drcs" || name == "drcs_consensus_only") return Mode::kDrcsConsensusOnly;
  throw ConfigError("unknown solver mode '" + name + "'");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kDrgda: return "drgda";
    case Mode::kDrsgda: return "drsgda";
    case Mode::kCentralized: return "centralized";
    case Mode::kDrcsConsensusOnly: return "drcs_consensus_only";
  }
  return "unknown";
}

void SolverConfig::check() const {
  std::ostringstream os;
  if (!(alpha > 0.0 && alpha <= 1.0)) os << "alpha = " << alpha << " must lie in (0, 1]; ";
  if (!(beta >= 0.0)) os << "beta = " << beta << " must be >= 0; ";
  if (!(eta > 0.0)) os << "eta = " << eta << " must be > 0; ";
  if (k < 1) os << "k = " << k << " must be >= 1; ";
  if (iterations < 1) os << "iterations = " << iterations << " must be >= 1; ";
  if (batch_size < 1) os << "batch_size must be >= 1; ";
  const std::string msg = os.str();
  if (!msg.empty()) throw ConfigError("solver config: " + msg.substr(0, msg.size() - 2));
}

std::vector<std::size_t> draw_batch(std::size_t sample_count, std::size_t q, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(sample_count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (q >= sample_count) return idx;
  // Partial Fisher-Yates: the first q slots become a uniform q-subset.
  for (std::size_t i = 0; i < q; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, sample_count - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(q);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

using BatchPicker = std::function<std::vector<std::size_t>(int node)>;

void require_finite(const Matrix& m, const char* what, int node) {
  if (!m.allFinite()) {
    throw NumericError(std::string("non-finite ") + what + " at node " + std::to_string(node));
  }
}

std::vector<Matrix> collect(const std::vector<NodeState>& states, Matrix NodeState::*field) {
  std::vector<Matrix> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(s.*field);
  return out;
}

std::vector<Matrix> collect_x(const std::vector<NodeState>& states) {
  std::vector<Matrix> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(s.x.matrix());
  return out;
}

void check_states(const std::vector<NodeState>& states, const MixingMatrix& w) {
  if (static_cast<int>(states.size()) != w.size()) {
    throw DimensionError("got " + std::to_string(states.size()) + " node states for a " +
                         std::to_string(w.size()) + "-node mixing matrix");
  }
}

std::vector<NodeState> tracked_step(const std::vector<NodeState>& states, const MinimaxProblem& problem,
                                    const MixingMatrix& w, const SolverConfig& cfg, const BatchPicker& pick) {
  check_states(states, w);
  const int n = static_cast<int>(states.size());

  // Phase 1: every mix reads time-t values only.
  const std::vector<Matrix> mixed_x = mix(w, collect_x(states), cfg.k);
  const std::vector<Matrix> mixed_y = mix(w, collect(states, &NodeState::y), cfg.k);
  const std::vector<Matrix> mixed_u = mix(w, collect(states, &NodeState::u), cfg.k);
  const std::vector<Matrix> mixed_v = mix(w, collect(states, &NodeState::v), cfg.v_power());

  std::vector<NodeState> next;
  next.reserve(n);
  for (int i = 0; i < n; ++i) {
    const NodeState& s = states[i];
    const TangentVector descent = project_tangent(s.x, s.u);
    const TangentVector consensus = project_tangent(s.x, cfg.alpha * mixed_x[i]);
    StiefelPoint x_new = retract_polar(s.x, consensus - cfg.beta * descent);
    Matrix y_new = mixed_y[i] + cfg.eta * s.v;
    if (cfg.project_dual) y_new = problem.project_dual(y_new);
    require_finite(y_new, "dual iterate", i);
    next.push_back(NodeState{std::move(x_new), std::move(y_new), Matrix(), Matrix(), Matrix(), Matrix(), {}});
  }

  // Phase 2: new gradients and tracker updates.
  for (int i = 0; i < n; ++i) {
    NodeState& s = next[i];
    s.batch = pick(i);
    const Matrix& xm = s.x.matrix();
    s.grad_x = riemannian_gradient(s.x, problem.grad_x(i, xm, s.y, s.batch)).matrix();
    s.grad_y = problem.grad_y(i, xm, s.y, s.batch);
    require_finite(s.grad_x, "x-gradient", i);
    require_finite(s.grad_y, "y-gradient", i);
    s.u = mixed_u[i] + s.grad_x - states[i].grad_x;
    s.v = mixed_v[i] + s.grad_y - states[i].grad_y;
  }
  return next;
}

}  // namespace

std::vector<NodeState> initialize_states(const MinimaxProblem& problem, const SolverConfig& cfg, Mode mode,
                                         std::mt19937_64& batch_rng) {
  std::mt19937_64 init_rng(cfg.seed);
  const StiefelPoint common = random_stiefel(problem.primal_rows(), problem.primal_cols(), init_rng);
  const Matrix y0 = problem.initial_dual();

  if (mode == Mode::kCentralized) {
    NodeState s{common, y0, Matrix(), Matrix(), Matrix(), Matrix(), {}};
    s.grad_x = riemannian_gradient(s.x, problem.global_grad_x(s.x.matrix(), s.y)).matrix();
    s.grad_y = problem.global_grad_y(s.x.matrix(), s.y);
    s.u = s.grad_x;
    s.v = s.grad_y;
    return {s};
  }

  const int n = problem.node_count();
  std::vector<NodeState> states;
  states.reserve(n);
  for (int i = 0; i < n; ++i) {
    StiefelPoint x = common;
    if (cfg.init_perturbation > 0.0) {
      x = retract_polar(common, random_tangent(common, cfg.init_perturbation, init_rng));
    }
    NodeState s{std::move(x), y0, Matrix(), Matrix(), Matrix(), Matrix(), {}};
    s.batch = mode == Mode::kDrsgda ? draw_batch(problem.sample_count(i), cfg.batch_size, batch_rng)
                                    : problem.full_batch(i);
    s.grad_x = riemannian_gradient(s.x, problem.grad_x(i, s.x.matrix(), s.y, s.batch)).matrix();
    s.grad_y = problem.grad_y(i, s.x.matrix(), s.y, s.batch);
    s.u = s.grad_x;
    s.v = s.grad_y;
    states.push_back(std::move(s));
  }
  return states;
}

std::vector<NodeState> drgda_step(const std::vector<NodeState>& states, const MinimaxProblem& problem,
                                  const MixingMatrix& w, const SolverConfig& cfg) {
  return tracked_step(states, problem, w, cfg, [&](int node) { return problem.full_batch(node); });
}

std::vector<NodeState> drsgda_step(const std::vector<NodeState>& states, const MinimaxProblem& problem,
                                   const MixingMatrix& w, const SolverConfig& cfg, std::mt19937_64& rng) {
  return tracked_step(states, problem, w, cfg, [&](int node) {
    return draw_batch(problem.sample_count(node), cfg.batch_size, rng);
  });
}

std::vector<NodeState> drcs_step(const std::vector<NodeState>& states, const MixingMatrix& w,
                                 const SolverConfig& cfg) {
  check_states(states, w);
  const std::vector<Matrix> mixed_x = mix(w, collect_x(states), cfg.k);
  std::vector<NodeState> next = states;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const TangentVector consensus = project_tangent(states[i].x, cfg.alpha * mixed_x[i]);
    next[i].x = retract_polar(states[i].x, consensus);
  }
  return next;
}

NodeState centralized_step(const NodeState& state, const MinimaxProblem& problem, const SolverConfig& cfg) {
  NodeState next = state;
  const TangentVector grad = project_tangent(state.x, state.grad_x);
  next.x = retract_polar(state.x, -cfg.beta * grad);
  next.y = state.y + cfg.eta * state.grad_y;
  if (cfg.project_dual) next.y = problem.project_dual(next.y);
  require_finite(next.y, "dual iterate", 0);
  next.grad_x = riemannian_gradient(next.x, problem.global_grad_x(next.x.matrix(), next.y)).matrix();
  next.grad_y = problem.global_grad_y(next.x.matrix(), next.y);
  require_finite(next.grad_x, "x-gradient", 0);
  require_finite(next.grad_y, "y-gradient", 0);
  next.u = next.grad_x;
  next.v = next.grad_y;
  return next;
}

long long rounds_per_iteration(Mode mode, const SolverConfig& cfg) {
  switch (mode) {
    case Mode::kDrgda:
    case Mode::kDrsgda: return 3LL * cfg.k + cfg.v_power();
    case Mode::kDrcsConsensusOnly: return cfg.k;
    case Mode::kCentralized: return 0;
  }
  return 0;
}

namespace {

TraceRecord make_record(int t, const std::vector<NodeState>& states, const MinimaxProblem& problem,
                        const SolverConfig& cfg) {
  std::vector<StiefelPoint> xs;
  xs.reserve(states.size());
  for (const auto& s : states) xs.push_back(s.x);
  const std::vector<Matrix> ys = collect(states, &NodeState::y);

  const MetricEvaluation eval = evaluate_metric(problem, xs, ys, cfg.metric_weight, cfg.project_dual);
  TraceRecord rec;
  rec.t = t;
  rec.metric = eval.value;
  rec.phi_hat = eval.phi_hat;

  const ConsensusError ce = consensus_error(xs);
  rec.x_consensus_l2 = ce.l2;
  rec.x_consensus_linf = ce.linf;
  const Matrix ymean = block_mean(ys);
  for (const auto& y : ys) rec.y_consensus_l2 += (y - ymean).squaredNorm();
  rec.y_consensus_l2 /= static_cast<double>(ys.size());

  const Matrix gbar = block_mean(collect(states, &NodeState::grad_x));
  rec.mean_node_grad_norm = gbar.norm();
  rec.tracker_drift_u = (block_mean(collect(states, &NodeState::u)) - gbar).norm();
  rec.tracker_drift_v =
      (block_mean(collect(states, &NodeState::v)) - block_mean(collect(states, &NodeState::grad_y))).norm();
  return rec;
}

}  // namespace

RunResult run(const MinimaxProblem& problem, const MixingMatrix& w, const SolverConfig& cfg, Mode mode) {
  cfg.check();
  if (mode != Mode::kCentralized && w.size() != problem.node_count()) {
    throw DimensionError("mixing matrix has " + std::to_string(w.size()) + " nodes, problem has " +
                         std::to_string(problem.node_count()));
  }
  if (mode == Mode::kDrsgda) {
    for (int i = 0; i < problem.node_count(); ++i) {
      if (cfg.batch_size > problem.sample_count(i)) {
        throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds the " +
                          std::to_string(problem.sample_count(i)) + " samples of node " + std::to_string(i));
      }
    }
  }

  std::mt19937_64 batch_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  RunResult result;
  std::vector<NodeState> states = initialize_states(problem, cfg, mode, batch_rng);
  const long long per_iter = rounds_per_iteration(mode, cfg);
  result.records.reserve(cfg.iterations);

  using Clock = std::chrono::steady_clock;
  double step_ms = 0.0;
  try {
    for (int t = 0; t < cfg.iterations; ++t) {
      TraceRecord rec = make_record(t, states, problem, cfg);
      rec.comms = per_iter * t;
      rec.wall_ms = step_ms;
      for (const auto& s : states) {
        result.empirical_gradient_bound = std::max(result.empirical_gradient_bound, s.grad_x.norm());
      }
      const double total = rec.metric.total;
      result.records.push_back(rec);
      if (!std::isfinite(total) || total > cfg.divergence_threshold) {
        std::ostringstream os;
        os << "divergence at t = " << t << ": metric " << total << " exceeds " << cfg.divergence_threshold;
        throw NumericError(os.str());
      }
      if (t + 1 == cfg.iterations) break;

      const auto start = Clock::now();
      switch (mode) {
        case Mode::kDrgda: states = drgda_step(states, problem, w, cfg); break;
        case Mode::kDrsgda: states = drsgda_step(states, problem, w, cfg, batch_rng); break;
        case Mode::kDrcsConsensusOnly: states = drcs_step(states, w, cfg); break;
        case Mode::kCentralized: states = {centralized_step(states.front(), problem, cfg)}; break;
      }
      if (cfg.record_timing) {
        step_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      }
    }
  } catch (const Error& e) {
    result.error = e.what();
  }
  result.final_states = std::move(states);
  return result;
}

}  // namespace dstiefel
