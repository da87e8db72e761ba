#pragma once

// Decentralized minimax problems min_{x in St(d,r)} max_{y in Y} (1/n) sum_i f_i(x, y)
// where every local objective is a finite sum over the node's samples.

#include <cstdint>
#include <array>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace dstiefel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Euclidean projection onto the probability simplex {p >= 0, sum p = 1}.
Vector project_simplex(const Vector& v);

/// Sample indices drawn by one node for one stochastic gradient evaluation.
struct SampleBatch {
  int node = 0;
  std::vector<std::size_t> indices;  // sorted, unique, < sample_count(node)

  std::size_t size() const noexcept { return indices.size(); }
};

/// Common interface for f_i. Gradients with respect to x are Euclidean; the
/// solver projects them onto the tangent space.
///
/// Batch evaluations average the per-sample terms in the order the indices
/// appear, so a full batch {0, ..., m-1} reproduces the deterministic value
/// bit for bit.
class MinimaxProblem {
 public:
  virtual ~MinimaxProblem() = default;

  virtual std::string kind() const = 0;
  virtual int node_count() const = 0;
  virtual Eigen::Index primal_rows() const = 0;
  virtual Eigen::Index primal_cols() const = 0;
  virtual Eigen::Index dual_rows() const = 0;
  virtual Eigen::Index dual_cols() const = 0;
  virtual std::size_t sample_count(int node) const = 0;

  virtual double sample_value(int node, std::size_t s, const Matrix& x, const Matrix& y) const = 0;
  virtual Matrix sample_grad_x(int node, std::size_t s, const Matrix& x, const Matrix& y) const = 0;
  virtual Matrix sample_grad_y(int node, std::size_t s, const Matrix& x, const Matrix& y) const = 0;

  /// Euclidean projection onto the dual feasible set Y.
  virtual Matrix project_dual(const Matrix& y) const = 0;
  /// A random point of Y, used by probes.
  virtual Matrix random_dual(std::mt19937_64& rng) const = 0;

  /// Strong-concavity modulus mu of every f_i(x, .).
  virtual double strong_concavity() const = 0;
  /// Lipschitz constant of y -> grad_y f_i(x, y); the inner ascent uses 1/L22.
  virtual double dual_smoothness() const = 0;

  /// argmax_{y in Y} F(x, y) when it has a closed form.
  virtual std::optional<Matrix> closed_form_maximizer(const Matrix& /*x*/) const { return std::nullopt; }

  /// Generation parameters, serialized into trace headers.
  virtual nlohmann::json describe() const = 0;

  std::vector<std::size_t> full_batch(int node) const;

  double value(int node, const Matrix& x, const Matrix& y, std::span<const std::size_t> batch) const;
  Matrix grad_x(int node, const Matrix& x, const Matrix& y, std::span<const std::size_t> batch) const;
  Matrix grad_y(int node, const Matrix& x, const Matrix& y, std::span<const std::size_t> batch) const;

  double value(int node, const Matrix& x, const Matrix& y) const;
  Matrix grad_x(int node, const Matrix& x, const Matrix& y) const;
  Matrix grad_y(int node, const Matrix& x, const Matrix& y) const;

  /// F(x, y) = (1/n) sum_i f_i(x, y) and its partial gradients.
  double global_value(const Matrix& x, const Matrix& y) const;
  Matrix global_grad_x(const Matrix& x, const Matrix& y) const;
  Matrix global_grad_y(const Matrix& x, const Matrix& y) const;

  /// Initial dual point: the projection of 0 onto Y.
  Matrix initial_dual() const;

 protected:
  void check_node(int node) const;
};

// --- synthetic bilinear --------------------------------------------------

struct SyntheticBilinearParams {
  int nodes = 4;
  Eigen::Index d = 10;
  Eigen::Index r = 2;
  double mu = 1.0;
  /// Node data are a shared draw plus this multiple of an independent
  /// per-node draw (A entries scaled by 1/sqrt(d), b entries unit variance).
  double heterogeneity = 0.5;
  std::size_t samples_per_node = 1;
  /// Per-sample perturbation scale around the node means (zero-mean per node).
  double sample_noise = 0.5;
  std::uint64_t seed = 1;
};

/// f_i(x, y; s) = <A_is x, y> - (mu/2) ||y - b_is||_F^2 with y in a Frobenius
/// ball of radius R chosen large enough that every node and the global
/// maximizer stay interior. Node averages satisfy A_i = mean_s A_is and
/// b_i = mean_s b_is, so f_i equals <A_i x, y> - (mu/2)||y - b_i||^2 up to an
/// additive constant.
class SyntheticBilinear final : public MinimaxProblem {
 public:
  explicit SyntheticBilinear(const SyntheticBilinearParams& params);

  std::string kind() const override { return "synthetic_bilinear"; }
  int node_count() const override { return params_.nodes; }
  Eigen::Index primal_rows() const override { return params_.d; }
  Eigen::Index primal_cols() const override { return params_.r; }
  Eigen::Index dual_rows() const override { return params_.d; }
  Eigen::Index dual_cols() const override { return params_.r; }
  std::size_t sample_count(int node) const override;

  double sample_value(int node, std::size_t s, const Matrix& x, const Matrix& y) const override;
  Matrix sample_grad_x(int node, std::size_t s, const Matrix& x, const Matrix& y) const override;
  Matrix sample_grad_y(int node, std::size_t s, const Matrix& x, const Matrix& y) const override;

  Matrix project_dual(const Matrix& y) const override;
  Matrix random_dual(std::mt19937_64& rng) const override;
  double strong_concavity() const override { return params_.mu; }
  double dual_smoothness() const override { return params_.mu; }
  std::optional<Matrix> closed_form_maximizer(const Matrix& x) const override;
  nlohmann::json describe() const override;

  const Matrix& node_a(int node) const { return a_mean_.at(node); }
  const Matrix& node_b(int node) const { return b_mean_.at(node); }
  /// Unconstrained maximizer of f_i(x, .): b_i + A_i x / mu.
  Matrix node_maximizer(int node, const Matrix& x) const;
  double dual_radius() const noexcept { return radius_; }
  /// max_i ||A_i||_2.
  double max_operator_norm() const;

 private:
  SyntheticBilinearParams params_;
  std::vector<std::vector<Matrix>> a_;  // [node][sample], d x d
  std::vector<std::vector<Matrix>> b_;  // [node][sample], d x r
  std::vector<Matrix> a_mean_, b_mean_;
  Matrix a_bar_, b_bar_;
  double radius_ = 0.0;
};

std::unique_ptr<SyntheticBilinear> synthetic_bilinear(const SyntheticBilinearParams& params);

// --- datasets and classifiers ---------------------------------------------

/// Labeled features, one sample per row.
struct Dataset {
  Matrix features;  // N x d
  std::vector<int> labels;
  int classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Eigen::Index dim() const noexcept { return features.cols(); }
};

/// Gaussian blobs: sample s has label s % classes and features
/// center[label] + noise * N(0, I), with centers of norm `separation`.
Dataset make_gaussian_blobs(std::uint64_t seed, std::size_t samples, Eigen::Index d, int classes,
                            double separation = 3.0, double noise = 1.0);

enum class LossKind { kSquared, kSoftmaxCrossEntropy };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

/// Loss of the linear classifier logits = scale * w^T a with its gradient in w.
struct SampleLoss {
  double value = 0.0;
  Matrix grad;  // d x r
};
SampleLoss classifier_loss(LossKind kind, double scale, const Matrix& w,
                           const Eigen::Ref<const Eigen::RowVectorXd>& features, int label);

/// f_i(w, p; s) = n p_i l(w; s) - ||p - 1/n||^2 with p in the simplex over
/// nodes, so that F(w, p) = sum_i p_i l_i(w) - ||p - 1/n||^2 where l_i is the
/// mean loss over node i's shard. Shards are contiguous equal blocks.
class DroWeighting final : public MinimaxProblem {
 public:
  DroWeighting(Dataset data, int nodes, LossKind loss, double logit_scale = 1.0);

  std::string kind() const override { return "dro_weighting"; }
  int node_count() const override { return nodes_; }
  Eigen::Index primal_rows() const override { return data_.dim(); }
  Eigen::Index primal_cols() const override { return data_.classes; }
  Eigen::Index dual_rows() const override { return nodes_; }
  Eigen::Index dual_cols() const override { return 1; }
  std::size_t sample_count(int node) const override;

  double sample_value(int node, std::size_t s, const Matrix& x, const Matrix& y) const override;
  Matrix sample_grad_x(int node, std::size_t s, const Matrix& x, const Matrix& y) const override;
  Matrix sample_grad_y(int node, std::size_t s, const Matrix& x, const Matrix& y) const override;

  Matrix project_dual(const Matrix& y) const override;
  Matrix random_dual(std::mt19937_64& rng) const override;
  double strong_concavity() const override { return 2.0; }
  double dual_smoothness() const override { return 2.0; }
  std::optional<Matrix> closed_form_maximizer(const Matrix& x) const override;
  nlohmann::json describe() const override;

  /// Mean loss of every node's shard at w.
  Vector node_losses(const Matrix& w) const;

 private:
  std::size_t row(int node, std::size_t s) const { return static_cast<std::size_t>(node) * shard_ + s; }

  Dataset data_;
  int nodes_;
  LossKind loss_;
  double scale_;
  std::size_t shard_;
};

std::unique_ptr<DroWeighting> dro_weighting(Dataset data, int nodes, LossKind loss,
                                            double logit_scale = 1.0);

/// Fair three-class classification: f_i(w, u) = sum_c u_c L_ic(w) - rho ||u||^2
/// over the simplex in R^3, where L_ic is the mean softmax cross-entropy over
/// node i's class-c samples. Per-sample terms are reweighted by m_i / m_ic so
/// that the shard average reproduces the class-conditional means.
class FairClassification final : public MinimaxProblem {
 public:
  FairClassification(Dataset data, int nodes, double rho = 0.1, double logit_scale = 1.0);

  std::string kind() const override { return "fair_classification"; }
  int node_count() const override { return nodes_; }
  Eigen::Index primal_rows() const override { return data_.dim(); }
  Eigen::Index primal_cols() const override { return data_.classes; }
  Eigen::Index dual_rows() const override { return 3; }
  Eigen::Index dual_cols() const override { return 1; }
  std::size_t sample_count(int node) const override;

  double sample_value(int node, std::size_t s, const Matrix& x, const Matrix& y) const override;
  Matrix sample_grad_x(int node, std::size_t s, const Matrix& x, const Matrix& y) const override;
  Matrix sample_grad_y(int node, std::size_t s, const Matrix& x, const Matrix& y) const override;

  Matrix project_dual(const Matrix& y) const override;
  Matrix random_dual(std::mt19937_64& rng) const override;
  double strong_concavity() const override { return 2.0 * rho_; }
  double dual_smoothness() const override { return 2.0 * rho_; }
  nlohmann::json describe() const override;

  double rho() const noexcept { return rho_; }
  /// Class-conditional mean losses (L_i1, L_i2, L_i3) on node i's shard.
  Vector class_losses(int node, const Matrix& w) const;

 private:
  std::size_t row(int node, std::size_t s) const { return static_cast<std::size_t>(node) * shard_ + s; }

  Dataset data_;
  int nodes_;
  double rho_;
  double scale_;
  std::size_t shard_;
  std::vector<std::array<std::size_t, 3>> class_counts_;  // per node
};

std::unique_ptr<FairClassification> fair_classification(Dataset data, int nodes, double rho = 0.1,
                                                        double logit_scale = 1.0);

// --- probes ---------------------------------------------------------------

/// Largest observed gradient-difference ratios over random pairs.
struct LipschitzEstimate {
  double l11 = 0.0, l12 = 0.0, l21 = 0.0, l22 = 0.0;
  /// 1.5 x max of the four observed maxima.
  double l = 0.0;
  int pairs = 0;
};

LipschitzEstimate probe_lipschitz(const MinimaxProblem& problem, std::uint64_t seed, int pairs = 10000);

}  // namespace dstiefel
