#pragma once

// Communication graphs and doubly stochastic mixing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dstiefel {

using Matrix = Eigen::MatrixXd;

/// Undirected connected graph on nodes 0..n-1. Edges are stored with i < j,
/// deduplicated and sorted.
class Topology {
 public:
  /// Throws TopologyError on self-loops, out-of-range endpoints or a
  /// disconnected graph.
  Topology(int n, std::vector<std::pair<int, int>> edges, std::string kind = "custom");

  static Topology ring(int n);
  static Topology complete(int n);
  /// rows x cols grid with wrap-around in both directions.
  static Topology torus(int rows, int cols);
  /// G(n, p); redraws (up to max_attempts) until the sample is connected.
  static Topology erdos_renyi(int n, double p, std::uint64_t seed, int max_attempts = 1000);

  int size() const noexcept { return n_; }
  const std::vector<std::pair<int, int>>& edges() const noexcept { return edges_; }
  const std::string& kind() const noexcept { return kind_; }
  std::vector<int> degrees() const;

  static bool is_connected(int n, const std::vector<std::pair<int, int>>& edges);

 private:
  int n_;
  std::vector<std::pair<int, int>> edges_;
  std::string kind_;
};

/// Symmetric doubly stochastic matrix with its spectrum. Immutable.
class MixingMatrix {
 public:
  /// Validates symmetry, nonnegativity and unit row sums (1e-12) and computes
  /// the spectrum with a symmetric eigensolver.
  MixingMatrix(Matrix w, int k = 1);

  const Matrix& weights() const noexcept { return w_; }
  int size() const noexcept { return static_cast<int>(w_.rows()); }
  /// Second-largest eigenvalue (0 for a single node).
  double lambda2() const noexcept { return lambda2_; }
  /// Smallest eigenvalue.
  double lambda_n() const noexcept { return lambda_n_; }
  /// max(|lambda2|, |lambda_n|): contraction factor of one round on the
  /// subspace orthogonal to consensus.
  double contraction() const noexcept { return std::max(std::abs(lambda2_), std::abs(lambda_n_)); }
  /// Eigenvalues sorted in descending order.
  const Eigen::VectorXd& eigenvalues() const noexcept { return eigenvalues_; }
  /// Default number of communication rounds per mixing step.
  int k() const noexcept { return k_; }

  MixingMatrix with_power(int k) const;

 private:
  Matrix w_;
  Eigen::VectorXd eigenvalues_;
  double lambda2_ = 0.0;
  double lambda_n_ = 0.0;
  int k_ = 1;
};

/// Metropolis-Hastings weights: w_ij = 1 / (1 + max(deg_i, deg_j)) on edges,
/// w_ii = 1 - sum of the row's off-diagonal weights.
MixingMatrix build_metropolis(const Topology& topology, int k = 1);

/// Smallest k >= 1 with lambda2^k <= 1 / (2 sqrt(n)). Throws SpectralError
/// when lambda2 >= 1.
int required_k(double lambda2, int n);

/// out_i = sum_j (W^power)_ij values_j, applied as `power` successive rounds.
std::vector<Matrix> mix(const MixingMatrix& w, std::span<const Matrix> values, int power);

/// Blockwise Euclidean mean of per-node matrices.
Matrix block_mean(std::span<const Matrix> values);

}  // namespace dstiefel
