#pragma once

// Geometry of the Stiefel manifold St(d,r) = {X in R^{d x r} : X^T X = I_r}.
//
// Points and tangent vectors are thin wrappers over dense Eigen matrices. All
// free functions here are pure; nothing holds shared mutable state.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace dstiefel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Unconstrained d x r matrix (Euclidean gradients, mixed iterates, ...).
using AmbientMatrix = Eigen::MatrixXd;

inline constexpr double kOrthonormalityTol = 1e-10;
inline constexpr double kTangencyTol = 1e-8;
inline constexpr double kRepairableDrift = 1e-6;
inline constexpr double kSingularValueFloor = 1e-12;

/// ||X^T X - I||_F.
double orthonormality_defect(const Matrix& x);

/// A d x r matrix with orthonormal columns.
///
/// Construction accepts matrices whose orthonormality defect is at most
/// kOrthonormalityTol as-is, re-orthonormalizes (polar projection) those within
/// kRepairableDrift, and throws ManifoldError otherwise.
class StiefelPoint {
 public:
  explicit StiefelPoint(Matrix m);

  /// Polar projection of an arbitrary full-rank d x r matrix onto St(d,r).
  static StiefelPoint project(const Matrix& m);

  const Matrix& matrix() const noexcept { return m_; }
  Eigen::Index rows() const noexcept { return m_.rows(); }
  Eigen::Index cols() const noexcept { return m_.cols(); }

 private:
  struct Trusted {};
  StiefelPoint(Matrix m, Trusted) : m_(std::move(m)) {}

  Matrix m_;
};

/// A d x r matrix U in the tangent space at `base`: X^T U + U^T X = 0.
class TangentVector {
 public:
  /// Throws DimensionError on shape mismatch and ManifoldError when the
  /// tangency defect exceeds kTangencyTol.
  TangentVector(StiefelPoint base, Matrix m);

  const Matrix& matrix() const noexcept { return m_; }
  const StiefelPoint& base() const noexcept { return base_; }
  double norm() const { return m_.norm(); }

  static TangentVector zero(const StiefelPoint& base);

  TangentVector& operator*=(double s);
  friend TangentVector operator*(double s, TangentVector v) { return v *= s; }
  friend TangentVector operator-(const TangentVector& a, const TangentVector& b);
  friend TangentVector operator+(const TangentVector& a, const TangentVector& b);

 private:
  struct Trusted {};
  TangentVector(StiefelPoint base, Matrix m, Trusted)
      : base_(std::move(base)), m_(std::move(m)) {}
  friend TangentVector project_tangent(const StiefelPoint& x, const AmbientMatrix& y);

  StiefelPoint base_;
  Matrix m_;
};

/// ||X^T U + U^T X||_F.
double tangency_defect(const Matrix& x, const Matrix& u);

/// Orthogonal projection onto T_x: y - x (x^T y + y^T x) / 2.
TangentVector project_tangent(const StiefelPoint& x, const AmbientMatrix& y);

/// Orthogonal polar factor P Q^T of m = P S Q^T (thin SVD). Throws
/// SingularityError when the smallest singular value is below
/// kSingularValueFloor.
Matrix polar_factor(const Matrix& m);

/// Polar retraction R_x(u) = polar_factor(x + u).
StiefelPoint retract_polar(const StiefelPoint& x, const TangentVector& u);

/// Riemannian gradient for the metric induced by the Euclidean inner product.
TangentVector riemannian_gradient(const StiefelPoint& x, const AmbientMatrix& euclid_grad);

/// Nearest point on St(d,r) to the Euclidean mean of `points` (the induced
/// arithmetic mean). Throws SingularityError when that mean is rank-deficient.
StiefelPoint induced_arithmetic_mean(std::span<const StiefelPoint> points);

struct ConsensusError {
  double l2 = 0.0;    // (1/n) sum ||x_i - xhat||_F^2
  double linf = 0.0;  // max_i ||x_i - xhat||_F
};

ConsensusError consensus_error(std::span<const StiefelPoint> points);

/// Point drawn as the polar factor of a standard Gaussian d x r matrix.
StiefelPoint random_stiefel(Eigen::Index d, Eigen::Index r, std::mt19937_64& rng);

/// Random tangent vector at x with Frobenius norm `norm`.
TangentVector random_tangent(const StiefelPoint& x, double norm, std::mt19937_64& rng);

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

/// Empirical second-order constant of the polar retraction on St(d,r): the
/// largest observed ||R_x(u) - (x + u)|| / ||u||^2 over random base points,
/// random tangent directions and ||u|| in a sweep from 1e-2 to 10.
double estimate_retraction_constant(Eigen::Index d, Eigen::Index r, std::uint64_t seed,
                                    int trials = 200);

}  // namespace dstiefel
