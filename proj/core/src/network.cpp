#include "dstiefel/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "dstiefel/errors.hpp"

namespace dstiefel {

Topology::Topology(int n, std::vector<std::pair<int, int>> edges, std::string kind)
    : n_(n), kind_(std::move(kind)) {
  if (n < 1) throw TopologyError("topology needs at least one node");
  std::set<std::pair<int, int>> unique;
  for (auto [i, j] : edges) {
    if (i < 0 || j < 0 || i >= n || j >= n) {
      throw TopologyError("edge (" + std::to_string(i) + "," + std::to_string(j) + ") out of range");
    }
    if (i == j) throw TopologyError("self-loop at node " + std::to_string(i));
    unique.emplace(std::min(i, j), std::max(i, j));
  }
  edges_.assign(unique.begin(), unique.end());
  if (!is_connected(n_, edges_)) throw TopologyError("graph '" + kind_ + "' is disconnected");
}

bool Topology::is_connected(int n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  int components = n;
  for (auto [i, j] : edges) {
    const int a = find(i), b = find(j);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

Topology Topology::ring(int n) {
  std::vector<std::pair<int, int>> edges;
  if (n == 2) edges.emplace_back(0, 1);
  if (n > 2) {
    for (int i = 0; i < n; ++i) edges.emplace_back(i, (i + 1) % n);
  }
  return Topology(n, std::move(edges), "ring");
}

Topology Topology::complete(int n) {
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) edges.emplace_back(i, j);
  }
  return Topology(n, std::move(edges), "complete");
}

Topology Topology::torus(int rows, int cols) {
  if (rows < 1 || cols < 1) throw TopologyError("torus needs positive dimensions");
  std::vector<std::pair<int, int>> edges;
  auto id = [cols](int r, int c) { return r * cols + c; };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (cols > 1) {
        const int right = id(r, (c + 1) % cols);
        if (right != id(r, c)) edges.emplace_back(id(r, c), right);
      }
      if (rows > 1) {
        const int down = id((r + 1) % rows, c);
        if (down != id(r, c)) edges.emplace_back(id(r, c), down);
      }
    }
  }
  return Topology(rows * cols, std::move(edges), "torus");
}

Topology Topology::erdos_renyi(int n, double p, std::uint64_t seed, int max_attempts) {
  if (!(p > 0.0 && p <= 1.0)) throw TopologyError("erdos_renyi: p must lie in (0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (unif(rng) < p) edges.emplace_back(i, j);
      }
    }
    if (is_connected(n, edges)) return Topology(n, std::move(edges), "erdos_renyi");
  }
  throw TopologyError("erdos_renyi: no connected sample after " + std::to_string(max_attempts) +
                      " attempts");
}

std::vector<int> Topology::degrees() const {
  std::vector<int> deg(n_, 0);
  for (auto [i, j] : edges_) {
    ++deg[i];
    ++deg[j];
  }
  return deg;
}

MixingMatrix::MixingMatrix(Matrix w, int k) : w_(std::move(w)), k_(k) {
  if (w_.rows() != w_.cols() || w_.rows() < 1) throw DimensionError("mixing matrix must be square");
  if (k < 1) throw SpectralError("mixing power must be >= 1");
  const Eigen::Index n = w_.rows();
  if ((w_ - w_.transpose()).cwiseAbs().maxCoeff() > 1e-14) {
    throw SpectralError("mixing matrix is not symmetric");
  }
  if (w_.minCoeff() < 0.0) throw SpectralError("mixing matrix has negative entries");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(w_.row(i).sum() - 1.0) > 1e-12) {
      throw SpectralError("row " + std::to_string(i) + " of the mixing matrix does not sum to 1");
    }
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(w_, Eigen::EigenvaluesOnly);
  eigenvalues_ = eig.eigenvalues().reverse();  // ascending -> descending
  lambda2_ = n > 1 ? eigenvalues_(1) : 0.0;
  lambda_n_ = eigenvalues_(n - 1);
}

MixingMatrix MixingMatrix::with_power(int k) const {
  MixingMatrix copy = *this;
  if (k < 1) throw SpectralError("mixing power must be >= 1");
  copy.k_ = k;
  return copy;
}

MixingMatrix build_metropolis(const Topology& topology, int k) {
  const int n = topology.size();
  const std::vector<int> deg = topology.degrees();
  Matrix w = Matrix::Zero(n, n);
  for (auto [i, j] : topology.edges()) {
    const double wij = 1.0 / (1.0 + std::max(deg[i], deg[j]));
    w(i, j) = wij;
    w(j, i) = wij;
  }
  for (int i = 0; i < n; ++i) {
    double off = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j != i) off += w(i, j);
    }
    w(i, i) = 1.0 - off;
  }
  return MixingMatrix(std::move(w), k);
}

int required_k(double lambda2, int n) {
  if (n < 1) throw SpectralError("required_k: n must be >= 1");
  if (!(lambda2 < 1.0)) {
    std::ostringstream os;
    os << "required_k: lambda2 = " << lambda2 << " >= 1 (graph not connected?)";
    throw SpectralError(os.str());
  }
  if (lambda2 <= 0.0) return 1;
  const double target = 1.0 / (2.0 * std::sqrt(static_cast<double>(n)));
  int k = std::max(1, static_cast<int>(std::ceil(std::log(target) / std::log(lambda2))));
  // Guard the ceiling against log roundoff in either direction.
  while (std::pow(lambda2, k) > target) ++k;
  while (k > 1 && std::pow(lambda2, k - 1) <= target) --k;
  return k;
}

std::vector<Matrix> mix(const MixingMatrix& w, std::span<const Matrix> values, int power) {
  const int n = w.size();
  if (static_cast<int>(values.size()) != n) {
    throw DimensionError("mix: got " + std::to_string(values.size()) + " values for " +
                         std::to_string(n) + " nodes");
  }
  if (power < 1) throw DimensionError("mix: power must be >= 1");
  for (const auto& v : values) {
    if (v.rows() != values[0].rows() || v.cols() != values[0].cols()) {
      throw DimensionError("mix: per-node blocks differ in shape");
    }
  }
  const Matrix& weights = w.weights();
  std::vector<Matrix> cur(values.begin(), values.end());
  std::vector<Matrix> next(n);
  for (int round = 0; round < power; ++round) {
    for (int i = 0; i < n; ++i) {
      next[i] = Matrix::Zero(cur[0].rows(), cur[0].cols());
      for (int j = 0; j < n; ++j) {
        const double wij = weights(i, j);
        if (wij != 0.0) next[i] += wij * cur[j];
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

Matrix block_mean(std::span<const Matrix> values) {
  if (values.empty()) throw DimensionError("block_mean: no values");
  Matrix sum = values[0];
  for (std::size_t i = 1; i < values.size(); ++i) sum += values[i];
  return sum / static_cast<double>(values.size());
}

}  // namespace dstiefel
