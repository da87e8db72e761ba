#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "dstiefel/errors.hpp"
#include "dstiefel/metrics.hpp"
#include "dstiefel/problems.hpp"

using namespace dstiefel;

namespace {

// Brute-force Euclidean projection onto the simplex: for every support set S,
// the KKT point is v_S - tau with tau = (sum v_S - 1)/|S|; keep feasible ones.
Vector simplex_by_enumeration(const Vector& v) {
  const int n = static_cast<int>(v.size());
  Vector best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < (1 << n); ++mask) {
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i) {
      if (mask & (1 << i)) {
        sum += v(i);
        ++count;
      }
    }
    const double tau = (sum - 1.0) / count;
    Vector p = Vector::Zero(n);
    bool feasible = true;
    for (int i = 0; i < n; ++i) {
      if (mask & (1 << i)) {
        p(i) = v(i) - tau;
        if (p(i) < 0.0) feasible = false;
      }
    }
    if (!feasible) continue;
    const double dist = (p - v).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = p;
    }
  }
  return best;
}

SyntheticBilinearParams small_synthetic(std::size_t samples = 1) {
  SyntheticBilinearParams p;
  p.nodes = 4;
  p.d = 6;
  p.r = 2;
  p.mu = 1.5;
  p.samples_per_node = samples;
  p.seed = 21;
  return p;
}

Dataset blobs(std::size_t samples = 60) { return make_gaussian_blobs(3, samples, 5, 3); }

}  // namespace

TEST(Simplex, KnownPoints) {
  EXPECT_LE((project_simplex(Vector::Constant(3, 1.0 / 3.0)) - Vector::Constant(3, 1.0 / 3.0)).norm(), 1e-15);
  Vector v(3);
  v << 10.0, 0.0, 0.0;
  Vector e(3);
  e << 1.0, 0.0, 0.0;
  EXPECT_LE((project_simplex(v) - e).norm(), 1e-15);
}

TEST(Simplex, MatchesSupportEnumeration) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> normal(0.0, 1.5);
  for (int t = 0; t < 500; ++t) {
    Vector v(5);
    for (int i = 0; i < 5; ++i) v(i) = normal(rng);
    EXPECT_LE((project_simplex(v) - simplex_by_enumeration(v)).norm(), 1e-9);
  }
}

TEST(Synthetic, ClosedFormIsStationary) {
  const auto problem = synthetic_bilinear(small_synthetic());
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = random_stiefel(6, 2, rng).matrix();
    for (int i = 0; i < 4; ++i) {
      EXPECT_LE(problem->grad_y(i, x, problem->node_maximizer(i, x)).norm(), 1e-12);
    }
    const Matrix ystar = *problem->closed_form_maximizer(x);
    EXPECT_LE(problem->global_grad_y(x, ystar).norm(), 1e-12);
    EXPECT_LT(ystar.norm(), problem->dual_radius());
  }
}

TEST(Synthetic, SampleMeansRecoverNodeObjective) {
  const auto many = synthetic_bilinear(small_synthetic(5));
  std::mt19937_64 rng(2);
  const Matrix x = random_stiefel(6, 2, rng).matrix();
  const Matrix y = many->random_dual(rng);
  // Full-batch gradients equal the node-mean model; single-sample ones differ.
  for (int i = 0; i < 4; ++i) {
    const Matrix gy = many->grad_y(i, x, y);
    const Matrix expected = many->node_maximizer(i, x);
    EXPECT_LE((gy - many->strong_concavity() * (expected - y)).norm(), 1e-12);
    const std::vector<std::size_t> first{0};
    EXPECT_GT((many->grad_y(i, x, y, first) - gy).norm(), 1e-6);
  }
}

TEST(Synthetic, MinibatchGradientIsUnbiased) {
  const auto problem = synthetic_bilinear(small_synthetic(5));
  std::mt19937_64 rng(3);
  const Matrix x = random_stiefel(6, 2, rng).matrix();
  const Matrix y = problem->random_dual(rng);
  // Exhaustive average over all C(5,2) batches equals the full gradient.
  Matrix sum_x = Matrix::Zero(6, 2), sum_y = Matrix::Zero(6, 2);
  int count = 0;
  for (std::size_t a = 0; a < 5; ++a) {
    for (std::size_t b = a + 1; b < 5; ++b) {
      const std::vector<std::size_t> batch{a, b};
      sum_x += problem->grad_x(1, x, y, batch);
      sum_y += problem->grad_y(1, x, y, batch);
      ++count;
    }
  }
  EXPECT_LE((sum_x / count - problem->grad_x(1, x, y)).norm(), 1e-12);
  EXPECT_LE((sum_y / count - problem->grad_y(1, x, y)).norm(), 1e-12);
}

TEST(Synthetic, RejectsBadParameters) {
  auto p = small_synthetic();
  p.mu = 0.0;
  EXPECT_THROW(synthetic_bilinear(p), ConfigError);
  p = small_synthetic();
  p.r = 7;
  EXPECT_THROW(synthetic_bilinear(p), DimensionError);
}

TEST(Synthetic, LipschitzProbeMatchesOperatorNorms) {
  const auto problem = synthetic_bilinear(small_synthetic());
  const LipschitzEstimate est = probe_lipschitz(*problem, 4, 2000);
  EXPECT_NEAR(est.l22, problem->strong_concavity(), 1e-9);
  EXPECT_LE(est.l21, problem->max_operator_norm() * (1.0 + 1e-9));
  EXPECT_GE(est.l21, 0.5 * problem->max_operator_norm());
  EXPECT_NEAR(est.l, 1.5 * std::max({est.l11, est.l12, est.l21, est.l22}), 1e-12);
}

TEST(Classifier, LossGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const Dataset data = blobs(9);
  for (LossKind kind : {LossKind::kSquared, LossKind::kSoftmaxCrossEntropy}) {
    const Matrix w = gaussian_matrix(5, 3, rng);
    const SampleLoss l = classifier_loss(kind, 1.3, w, data.features.row(4), data.labels[4]);
    const double h = 1e-6;
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 3; ++j) {
        Matrix wp = w, wm = w;
        wp(i, j) += h;
        wm(i, j) -= h;
        const double fd = (classifier_loss(kind, 1.3, wp, data.features.row(4), data.labels[4]).value -
                           classifier_loss(kind, 1.3, wm, data.features.row(4), data.labels[4]).value) /
                          (2 * h);
        EXPECT_NEAR(fd, l.grad(i, j), 1e-7);
      }
    }
  }
}

TEST(Dro, GlobalObjectiveIsWeightedLossMinusPenalty) {
  const auto problem = dro_weighting(blobs(), 4, LossKind::kSoftmaxCrossEntropy);
  std::mt19937_64 rng(6);
  const Matrix w = random_stiefel(5, 3, rng).matrix();
  const Matrix p = problem->random_dual(rng);
  const Vector losses = problem->node_losses(w);
  const double expected = p.col(0).dot(losses) - (p.array() - 0.25).matrix().squaredNorm();
  EXPECT_NEAR(problem->global_value(w, p), expected, 1e-12);
}

TEST(Dro, ClosedFormMatchesAscentOracle) {
  for (LossKind kind : {LossKind::kSquared, LossKind::kSoftmaxCrossEntropy}) {
    const auto problem = dro_weighting(blobs(), 4, kind);
    std::mt19937_64 rng(7);
    for (int t = 0; t < 10; ++t) {
      const Matrix w = random_stiefel(5, 3, rng).matrix();
      const Matrix closed = *problem->closed_form_maximizer(w);
      const Matrix ascent = ascent_maximizer(*problem, w, problem->initial_dual(), 1e-13).y;
      EXPECT_LE((closed - ascent).norm(), 1e-8);
      EXPECT_NEAR(closed.sum(), 1.0, 1e-12);
    }
  }
}

TEST(Dro, UnevenPartitionThrows) {
  EXPECT_THROW(dro_weighting(blobs(61), 4, LossKind::kSquared), PartitionError);
}

TEST(Fair, ObjectiveUsesClassMeans) {
  const auto problem = fair_classification(blobs(), 4, 0.1);
  std::mt19937_64 rng(8);
  const Matrix w = random_stiefel(5, 3, rng).matrix();
  const Matrix u = problem->random_dual(rng);
  double expected = 0.0;
  for (int i = 0; i < 4; ++i) expected += u.col(0).dot(problem->class_losses(i, w)) / 4.0;
  expected -= 0.1 * u.squaredNorm();
  EXPECT_NEAR(problem->global_value(w, u), expected, 1e-12);
  EXPECT_FALSE(problem->closed_form_maximizer(w).has_value());
}

TEST(Fair, MissingClassInShardThrows) {
  Dataset data = blobs(12);
  for (std::size_t s = 0; s < 3; ++s) data.labels[s] = 0;
  EXPECT_THROW(fair_classification(data, 4), DataError);
}

TEST(Problems, FiniteDifferenceAgreement) {
  const auto syn = synthetic_bilinear(small_synthetic());
  const auto dro = dro_weighting(blobs(), 4, LossKind::kSoftmaxCrossEntropy);
  const auto fair = fair_classification(blobs(), 4, 0.1);
  std::mt19937_64 rng(9);
  for (const MinimaxProblem* p : {static_cast<const MinimaxProblem*>(syn.get()),
                                  static_cast<const MinimaxProblem*>(dro.get()),
                                  static_cast<const MinimaxProblem*>(fair.get())}) {
    const StiefelPoint x = random_stiefel(p->primal_rows(), p->primal_cols(), rng);
    const Matrix y = p->random_dual(rng);
    const FiniteDifferenceReport r = finite_difference_check(*p, x, y, 1e-5, 10);
    EXPECT_LE(r.rel_err_x, 1e-5) << p->kind();
    EXPECT_LE(r.rel_err_y, 1e-5) << p->kind();
  }
}
