#pragma once

// Convergence metric, inner-maximization oracle and gradient verification.

#include <cstdint>
#include <span>

#include <Eigen/Dense>

#include "dstiefel/manifold.hpp"
#include "dstiefel/problems.hpp"

namespace dstiefel {

inline constexpr double kInnerTolerance = 1e-10;
inline constexpr int kInnerMaxSteps = 100000;

struct InnerSolution {
  Matrix y;
  /// Ascent iterations performed (0 for a closed form).
  int steps = 0;
  bool closed_form = false;
};

/// y*(x) = argmax_{y in Y} F(x, y). Uses the problem's closed form when it has
/// one, otherwise projected gradient ascent with step 1/L22 from
/// problem.initial_dual() until ||y_{s+1} - y_s|| <= tol. Throws OracleError
/// after kInnerMaxSteps steps.
InnerSolution inner_maximizer(const MinimaxProblem& problem, const Matrix& x, double tol = kInnerTolerance);

/// Projected gradient ascent on F(x, .) from `start`, ignoring any closed form.
InnerSolution ascent_maximizer(const MinimaxProblem& problem, const Matrix& x, const Matrix& start,
                               double tol = kInnerTolerance, int max_steps = kInnerMaxSteps);

/// Phi(x) = F(x, y*(x)).
double phi(const MinimaxProblem& problem, const Matrix& x);

/// Components of the convergence metric
///   ||grad_x F(xhat, ybar)|| + (1/n)||x - xhat|| + (L/n)||ybar - y*(xhat)||.
struct MetricValue {
  double grad_norm = 0.0;
  double primal_consensus = 0.0;
  double dual_gap = 0.0;
  double total = 0.0;
};

struct MetricEvaluation {
  MetricValue value;
  Matrix xhat;   // induced arithmetic mean of the node iterates
  Matrix ybar;   // Euclidean mean of the duals (projected onto Y if requested)
  Matrix ystar;  // y*(xhat)
  double phi_hat = 0.0;  // F(xhat, y*(xhat))
};

/// `xs` and `ys` hold one entry per node. The first term is the Riemannian
/// gradient of the global objective at (xhat, ybar). Throws SingularityError
/// when the induced arithmetic mean is undefined.
MetricEvaluation evaluate_metric(const MinimaxProblem& problem, std::span<const StiefelPoint> xs,
                                 std::span<const Matrix> ys, double l_weight, bool project_dual = true);

struct FiniteDifferenceReport {
  double rel_err_x = 0.0;
  double rel_err_y = 0.0;
};

/// Central differences of F along `directions` random unit tangent directions
/// (through the polar retraction) and random unit ambient directions in y.
/// Each error is |fd - analytic| / max(|analytic|, ||gradient||), maximized
/// over directions.
FiniteDifferenceReport finite_difference_check(const MinimaxProblem& problem, const StiefelPoint& x,
                                               const Matrix& y, double eps, std::uint64_t seed,
                                               int directions = 20);

/// Empirical bound on ||grad_x f_i(x, y*(x))|| over random x and all nodes.
double probe_gradient_bound(const MinimaxProblem& problem, std::uint64_t seed, int probes = 200);

}  // namespace dstiefel
