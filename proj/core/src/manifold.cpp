#include "dstiefel/manifold.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "dstiefel/errors.hpp"

namespace dstiefel {
namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

double orthonormality_defect(const Matrix& x) {
  const Eigen::Index r = x.cols();
  return (x.transpose() * x - Matrix::Identity(r, r)).norm();
}

double tangency_defect(const Matrix& x, const Matrix& u) {
  const Matrix xtu = x.transpose() * u;
  return (xtu + xtu.transpose()).norm();
}

Matrix polar_factor(const Matrix& m) {
  if (m.rows() < m.cols() || m.cols() < 1) {
    throw DimensionError("polar_factor: need d >= r >= 1, got " + shape_str(m));
  }
  if (!m.allFinite()) throw SingularityError("polar_factor: non-finite input");
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smallest = svd.singularValues()(svd.singularValues().size() - 1);
  if (smallest < kSingularValueFloor) {
    std::ostringstream os;
    os << "polar_factor: smallest singular value " << smallest << " below " << kSingularValueFloor;
    throw SingularityError(os.str());
  }
  return svd.matrixU() * svd.matrixV().transpose();
}

StiefelPoint::StiefelPoint(Matrix m) {
  if (m.cols() < 1 || m.rows() < m.cols()) {
    throw DimensionError("StiefelPoint: need d >= r >= 1, got " + shape_str(m));
  }
  if (!m.allFinite()) throw ManifoldError("StiefelPoint: non-finite entries");
  const double defect = orthonormality_defect(m);
  if (defect <= kOrthonormalityTol) {
    m_ = std::move(m);
  } else if (defect <= kRepairableDrift) {
    m_ = polar_factor(m);
  } else {
    std::ostringstream os;
    os << "StiefelPoint: orthonormality defect " << defect << " exceeds " << kRepairableDrift;
    throw ManifoldError(os.str());
  }
}

StiefelPoint StiefelPoint::project(const Matrix& m) {
  return StiefelPoint(polar_factor(m), Trusted{});
}

TangentVector::TangentVector(StiefelPoint base, Matrix m) : base_(std::move(base)), m_(std::move(m)) {
  require_same_shape(base_.matrix(), m_, "TangentVector");
  const double defect = tangency_defect(base_.matrix(), m_);
  if (!(defect <= kTangencyTol)) {
    std::ostringstream os;
    os << "TangentVector: tangency defect " << defect << " exceeds " << kTangencyTol;
    throw ManifoldError(os.str());
  }
}

TangentVector TangentVector::zero(const StiefelPoint& base) {
  return TangentVector(base, Matrix::Zero(base.rows(), base.cols()), Trusted{});
}

TangentVector& TangentVector::operator*=(double s) {
  m_ *= s;
  return *this;
}

TangentVector operator-(const TangentVector& a, const TangentVector& b) {
  require_same_shape(a.m_, b.m_, "TangentVector::operator-");
  return TangentVector(a.base_, a.m_ - b.m_, TangentVector::Trusted{});
}

TangentVector operator+(const TangentVector& a, const TangentVector& b) {
  require_same_shape(a.m_, b.m_, "TangentVector::operator+");
  return TangentVector(a.base_, a.m_ + b.m_, TangentVector::Trusted{});
}

TangentVector project_tangent(const StiefelPoint& x, const AmbientMatrix& y) {
  require_same_shape(x.matrix(), y, "project_tangent");
  const Matrix& xm = x.matrix();
  const Matrix xty = xm.transpose() * y;
  Matrix out = y - 0.5 * xm * (xty + xty.transpose());
  return TangentVector(x, std::move(out), TangentVector::Trusted{});
}

StiefelPoint retract_polar(const StiefelPoint& x, const TangentVector& u) {
  require_same_shape(x.matrix(), u.matrix(), "retract_polar");
  if (u.matrix().isZero(0.0)) return x;
  return StiefelPoint::project(x.matrix() + u.matrix());
}

TangentVector riemannian_gradient(const StiefelPoint& x, const AmbientMatrix& euclid_grad) {
  return project_tangent(x, euclid_grad);
}

StiefelPoint induced_arithmetic_mean(std::span<const StiefelPoint> points) {
  if (points.empty()) throw DimensionError("induced_arithmetic_mean: empty point set");
  Matrix sum = points.front().matrix();
  for (std::size_t i = 1; i < points.size(); ++i) {
    require_same_shape(sum, points[i].matrix(), "induced_arithmetic_mean");
    sum += points[i].matrix();
  }
  sum /= static_cast<double>(points.size());
  return StiefelPoint::project(sum);
}

ConsensusError consensus_error(std::span<const StiefelPoint> points) {
  const StiefelPoint mean = induced_arithmetic_mean(points);
  ConsensusError err;
  for (const auto& p : points) {
    const double dist = (p.matrix() - mean.matrix()).norm();
    err.l2 += dist * dist;
    err.linf = std::max(err.linf, dist);
  }
  err.l2 /= static_cast<double>(points.size());
  return err;
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  // Column-major fill keeps the draw order independent of Eigen internals.
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

StiefelPoint random_stiefel(Eigen::Index d, Eigen::Index r, std::mt19937_64& rng) {
  const Matrix g = gaussian_matrix(d, r, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ() * Matrix::Identity(d, r);
  return StiefelPoint::project(q);
}

TangentVector random_tangent(const StiefelPoint& x, double norm, std::mt19937_64& rng) {
  TangentVector u = project_tangent(x, gaussian_matrix(x.rows(), x.cols(), rng));
  const double n = u.norm();
  if (n == 0.0) return u;
  u *= norm / n;
  return u;
}

double estimate_retraction_constant(Eigen::Index d, Eigen::Index r, std::uint64_t seed, int trials) {
  std::mt19937_64 rng(seed);
  constexpr std::array<double, 8> kNorms{0.01, 0.025, 0.05, 0.1, 0.2, 1.0, 3.0, 10.0};
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const StiefelPoint x = random_stiefel(d, r, rng);
    const TangentVector dir = random_tangent(x, 1.0, rng);
    for (double s : kNorms) {
      const TangentVector u = s * dir;
      const StiefelPoint moved = retract_polar(x, u);
      const double gap = (moved.matrix() - (x.matrix() + u.matrix())).norm();
      worst = std::max(worst, gap / (s * s));
    }
  }
  return worst;
}

}  // namespace dstiefel
