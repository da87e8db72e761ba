#include "dstiefel/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dstiefel/errors.hpp"
#include "dstiefel/network.hpp"

namespace dstiefel {

InnerSolution ascent_maximizer(const MinimaxProblem& problem, const Matrix& x, const Matrix& start,
                               double tol, int max_steps) {
  const double step = 1.0 / problem.dual_smoothness();
  Matrix y = problem.project_dual(start);
  for (int s = 0; s < max_steps; ++s) {
    Matrix next = problem.project_dual(y + step * problem.global_grad_y(x, y));
    const double moved = (next - y).norm();
    if (!std::isfinite(moved)) throw OracleError("inner ascent produced non-finite iterates");
    if (moved <= tol) return {std::move(next), s, false};
    y = std::move(next);
  }
  throw OracleError("inner ascent did not converge within " + std::to_string(max_steps) + " steps");
}

InnerSolution inner_maximizer(const MinimaxProblem& problem, const Matrix& x, double tol) {
  if (auto closed = problem.closed_form_maximizer(x)) return {std::move(*closed), 0, true};
  return ascent_maximizer(problem, x, problem.initial_dual(), tol);
}

double phi(const MinimaxProblem& problem, const Matrix& x) {
  return problem.global_value(x, inner_maximizer(problem, x).y);
}

MetricEvaluation evaluate_metric(const MinimaxProblem& problem, std::span<const StiefelPoint> xs,
                                 std::span<const Matrix> ys, double l_weight, bool project_dual) {
  if (xs.empty() || xs.size() != ys.size()) {
    throw DimensionError("evaluate_metric: need one primal and one dual iterate per node");
  }
  const double n = static_cast<double>(xs.size());
  MetricEvaluation out;
  const StiefelPoint xhat = induced_arithmetic_mean(xs);
  out.xhat = xhat.matrix();
  out.ybar = block_mean(ys);
  if (project_dual) out.ybar = problem.project_dual(out.ybar);
  out.ystar = inner_maximizer(problem, out.xhat).y;
  out.phi_hat = problem.global_value(out.xhat, out.ystar);

  const TangentVector grad = riemannian_gradient(xhat, problem.global_grad_x(out.xhat, out.ybar));
  double sq = 0.0;
  for (const auto& x : xs) sq += (x.matrix() - out.xhat).squaredNorm();

  MetricValue& m = out.value;
  m.grad_norm = grad.norm();
  m.primal_consensus = std::sqrt(sq) / n;
  m.dual_gap = l_weight / n * (out.ybar - out.ystar).norm();
  m.total = m.grad_norm + m.primal_consensus + m.dual_gap;
  return out;
}

FiniteDifferenceReport finite_difference_check(const MinimaxProblem& problem, const StiefelPoint& x,
                                               const Matrix& y, double eps, std::uint64_t seed,
                                               int directions) {
  std::mt19937_64 rng(seed);
  FiniteDifferenceReport report;
  const Matrix gx = riemannian_gradient(x, problem.global_grad_x(x.matrix(), y)).matrix();
  const Matrix gy = problem.global_grad_y(x.matrix(), y);

  for (int k = 0; k < directions; ++k) {
    const TangentVector u = random_tangent(x, 1.0, rng);
    const double plus = problem.global_value(retract_polar(x, eps * u).matrix(), y);
    const double minus = problem.global_value(retract_polar(x, -eps * u).matrix(), y);
    const double fd = (plus - minus) / (2.0 * eps);
    const double analytic = gx.cwiseProduct(u.matrix()).sum();
    const double scale = std::max({std::abs(analytic), gx.norm(), 1e-300});
    report.rel_err_x = std::max(report.rel_err_x, std::abs(fd - analytic) / scale);
  }
  for (int k = 0; k < directions; ++k) {
    Matrix v = gaussian_matrix(y.rows(), y.cols(), rng);
    v /= v.norm();
    const double plus = problem.global_value(x.matrix(), y + eps * v);
    const double minus = problem.global_value(x.matrix(), y - eps * v);
    const double fd = (plus - minus) / (2.0 * eps);
    const double analytic = gy.cwiseProduct(v).sum();
    const double scale = std::max({std::abs(analytic), gy.norm(), 1e-300});
    report.rel_err_y = std::max(report.rel_err_y, std::abs(fd - analytic) / scale);
  }
  return report;
}

double probe_gradient_bound(const MinimaxProblem& problem, std::uint64_t seed, int probes) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    const StiefelPoint x = random_stiefel(problem.primal_rows(), problem.primal_cols(), rng);
    const Matrix ystar = inner_maximizer(problem, x.matrix()).y;
    for (int i = 0; i < problem.node_count(); ++i) {
      worst = std::max(worst, riemannian_gradient(x, problem.grad_x(i, x.matrix(), ystar)).norm());
    }
  }
  return worst;
}

}  // namespace dstiefel
