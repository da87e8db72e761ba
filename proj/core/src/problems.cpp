#include "dstiefel/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dstiefel/errors.hpp"
#include "dstiefel/manifold.hpp"

namespace dstiefel {

Vector project_simplex(const Vector& v) {
  const Eigen::Index n = v.size();
  if (n == 0) return v;
  std::vector<double> sorted(v.data(), v.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cumulative += sorted[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - candidate > 0.0) theta = candidate;
  }
  return (v.array() - theta).max(0.0).matrix();
}

// --- MinimaxProblem ----------------------------------------------------------

void MinimaxProblem::check_node(int node) const {
  if (node < 0 || node >= node_count()) {
    throw DimensionError("node " + std::to_string(node) + " out of range [0, " +
                         std::to_string(node_count()) + ")");
  }
}

std::vector<std::size_t> MinimaxProblem::full_batch(int node) const {
  check_node(node);
  std::vector<std::size_t> all(sample_count(node));
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

double MinimaxProblem::value(int node, const Matrix& x, const Matrix& y,
                             std::span<const std::size_t> batch) const {
  check_node(node);
  if (batch.empty()) throw DimensionError("empty sample batch");
  double sum = 0.0;
  for (std::size_t s : batch) sum += sample_value(node, s, x, y);
  return sum / static_cast<double>(batch.size());
}

Matrix MinimaxProblem::grad_x(int node, const Matrix& x, const Matrix& y,
                              std::span<const std::size_t> batch) const {
  check_node(node);
  if (batch.empty()) throw DimensionError("empty sample batch");
  Matrix sum = sample_grad_x(node, batch[0], x, y);
  for (std::size_t k = 1; k < batch.size(); ++k) sum += sample_grad_x(node, batch[k], x, y);
  return sum / static_cast<double>(batch.size());
}

Matrix MinimaxProblem::grad_y(int node, const Matrix& x, const Matrix& y,
                              std::span<const std::size_t> batch) const {
  check_node(node);
  if (batch.empty()) throw DimensionError("empty sample batch");
  Matrix sum = sample_grad_y(node, batch[0], x, y);
  for (std::size_t k = 1; k < batch.size(); ++k) sum += sample_grad_y(node, batch[k], x, y);
  return sum / static_cast<double>(batch.size());
}

double MinimaxProblem::value(int node, const Matrix& x, const Matrix& y) const {
  return value(node, x, y, full_batch(node));
}

Matrix MinimaxProblem::grad_x(int node, const Matrix& x, const Matrix& y) const {
  return grad_x(node, x, y, full_batch(node));
}

Matrix MinimaxProblem::grad_y(int node, const Matrix& x, const Matrix& y) const {
  return grad_y(node, x, y, full_batch(node));
}

double MinimaxProblem::global_value(const Matrix& x, const Matrix& y) const {
  double sum = 0.0;
  for (int i = 0; i < node_count(); ++i) sum += value(i, x, y);
  return sum / node_count();
}

Matrix MinimaxProblem::global_grad_x(const Matrix& x, const Matrix& y) const {
  Matrix sum = grad_x(0, x, y);
  for (int i = 1; i < node_count(); ++i) sum += grad_x(i, x, y);
  return sum / node_count();
}

Matrix MinimaxProblem::global_grad_y(const Matrix& x, const Matrix& y) const {
  Matrix sum = grad_y(0, x, y);
  for (int i = 1; i < node_count(); ++i) sum += grad_y(i, x, y);
  return sum / node_count();
}

Matrix MinimaxProblem::initial_dual() const {
  return project_dual(Matrix::Zero(dual_rows(), dual_cols()));
}

// --- SyntheticBilinear -------------------------------------------------------

namespace {

double operator_norm(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

}  // namespace

SyntheticBilinear::SyntheticBilinear(const SyntheticBilinearParams& params) : params_(params) {
  if (params.nodes < 1 || params.d < 1 || params.r < 1 || params.r > params.d) {
    throw DimensionError("synthetic_bilinear: need n >= 1 and d >= r >= 1");
  }
  if (!(params.mu > 0.0)) throw ConfigError("synthetic_bilinear: mu must be positive");
  if (!(params.heterogeneity >= 0.0)) throw ConfigError("synthetic_bilinear: heterogeneity must be >= 0");
  if (params.samples_per_node < 1) throw ConfigError("synthetic_bilinear: samples_per_node must be >= 1");

  std::mt19937_64 rng(params.seed);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.d));
  const std::size_t m = params.samples_per_node;
  a_.resize(params.nodes);
  b_.resize(params.nodes);
  const double h = params.heterogeneity;
  const Matrix a0 = gaussian_matrix(params.d, params.d, rng) * inv_sqrt_d;
  const Matrix b0 = gaussian_matrix(params.d, params.r, rng);
  for (int i = 0; i < params.nodes; ++i) {
    const Matrix a = a0 + gaussian_matrix(params.d, params.d, rng) * (h * inv_sqrt_d);
    const Matrix b = b0 + gaussian_matrix(params.d, params.r, rng) * h;
    std::vector<Matrix> da(m), db(m);
    Matrix da_mean = Matrix::Zero(params.d, params.d), db_mean = Matrix::Zero(params.d, params.r);
    if (m > 1) {
      for (std::size_t s = 0; s < m; ++s) {
        da[s] = gaussian_matrix(params.d, params.d, rng) * (params.sample_noise * inv_sqrt_d);
        db[s] = gaussian_matrix(params.d, params.r, rng) * params.sample_noise;
        da_mean += da[s];
        db_mean += db[s];
      }
      da_mean /= static_cast<double>(m);
      db_mean /= static_cast<double>(m);
    }
    for (std::size_t s = 0; s < m; ++s) {
      if (m > 1) {
        a_[i].push_back(a + (da[s] - da_mean));
        b_[i].push_back(b + (db[s] - db_mean));
      } else {
        a_[i].push_back(a);
        b_[i].push_back(b);
      }
    }
    Matrix sa = a_[i][0], sb = b_[i][0];
    for (std::size_t s = 1; s < m; ++s) {
      sa += a_[i][s];
      sb += b_[i][s];
    }
    a_mean_.push_back(sa / static_cast<double>(m));
    b_mean_.push_back(sb / static_cast<double>(m));
  }
  a_bar_ = a_mean_[0];
  b_bar_ = b_mean_[0];
  double worst = 0.0;
  const double sqrt_r = std::sqrt(static_cast<double>(params.r));
  for (int i = 0; i < params.nodes; ++i) {
    if (i > 0) {
      a_bar_ += a_mean_[i];
      b_bar_ += b_mean_[i];
    }
    // ||A_i x||_F <= ||A_i||_2 sqrt(r) on St(d,r).
    worst = std::max(worst, b_mean_[i].norm() + sqrt_r * operator_norm(a_mean_[i]) / params.mu);
  }
  a_bar_ /= params.nodes;
  b_bar_ /= params.nodes;
  radius_ = 2.0 * worst;
}

std::size_t SyntheticBilinear::sample_count(int node) const {
  check_node(node);
  return params_.samples_per_node;
}

double SyntheticBilinear::sample_value(int node, std::size_t s, const Matrix& x, const Matrix& y) const {
  const Matrix& a = a_[node].at(s);
  const Matrix& b = b_[node].at(s);
  return (a * x).cwiseProduct(y).sum() - 0.5 * params_.mu * (y - b).squaredNorm();
}

Matrix SyntheticBilinear::sample_grad_x(int node, std::size_t s, const Matrix& /*x*/, const Matrix& y) const {
  return a_[node].at(s).transpose() * y;
}

Matrix SyntheticBilinear::sample_grad_y(int node, std::size_t s, const Matrix& x, const Matrix& y) const {
  return a_[node].at(s) * x - params_.mu * (y - b_[node].at(s));
}

Matrix SyntheticBilinear::project_dual(const Matrix& y) const {
  const double norm = y.norm();
  if (norm <= radius_) return y;
  return y * (radius_ / norm);
}

Matrix SyntheticBilinear::random_dual(std::mt19937_64& rng) const {
  Matrix g = gaussian_matrix(params_.d, params_.r, rng);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double n = g.norm();
  return n == 0.0 ? g : Matrix(g * (radius_ * unif(rng) / n));
}

std::optional<Matrix> SyntheticBilinear::closed_form_maximizer(const Matrix& x) const {
  return project_dual(b_bar_ + a_bar_ * x / params_.mu);
}

Matrix SyntheticBilinear::node_maximizer(int node, const Matrix& x) const {
  check_node(node);
  return b_mean_[node] + a_mean_[node] * x / params_.mu;
}

double SyntheticBilinear::max_operator_norm() const {
  double worst = 0.0;
  for (const auto& a : a_mean_) worst = std::max(worst, operator_norm(a));
  return worst;
}

nlohmann::json SyntheticBilinear::describe() const {
  return {{"kind", kind()},
          {"n", params_.nodes},
          {"d", params_.d},
          {"r", params_.r},
          {"mu", params_.mu},
          {"samples_per_node", params_.samples_per_node},
          {"heterogeneity", params_.heterogeneity},
          {"sample_noise", params_.sample_noise},
          {"seed", params_.seed},
          {"dual_radius", radius_}};
}

std::unique_ptr<SyntheticBilinear> synthetic_bilinear(const SyntheticBilinearParams& params) {
  return std::make_unique<SyntheticBilinear>(params);
}

// --- datasets and classifiers --------------------------------------------------

Dataset make_gaussian_blobs(std::uint64_t seed, std::size_t samples, Eigen::Index d, int classes,
                            double separation, double noise) {
  if (classes < 1 || d < 1) throw DataError("make_gaussian_blobs: need classes >= 1 and d >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix centers = gaussian_matrix(classes, d, rng);
  for (int c = 0; c < classes; ++c) centers.row(c) *= separation / centers.row(c).norm();
  Dataset data;
  data.classes = classes;
  data.features.resize(static_cast<Eigen::Index>(samples), d);
  data.labels.resize(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    const int label = static_cast<int>(s % static_cast<std::size_t>(classes));
    data.labels[s] = label;
    for (Eigen::Index j = 0; j < d; ++j) {
      data.features(static_cast<Eigen::Index>(s), j) = centers(label, j) + noise * normal(rng);
    }
  }
  return data;
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "squared") return LossKind::kSquared;
  if (name == "softmax" || name == "softmax-cross-entropy" || name == "cross_entropy") {
    return LossKind::kSoftmaxCrossEntropy;
  }
  throw ConfigError("unknown loss kind '" + name + "' (expected squared or softmax-cross-entropy)");
}

std::string to_string(LossKind kind) {
  return kind == LossKind::kSquared ? "squared" : "softmax-cross-entropy";
}

SampleLoss classifier_loss(LossKind kind, double scale, const Matrix& w,
                           const Eigen::Ref<const Eigen::RowVectorXd>& features, int label) {
  const Eigen::VectorXd a = features.transpose();
  const Eigen::VectorXd z = scale * (w.transpose() * a);
  Eigen::VectorXd residual;
  SampleLoss out;
  if (kind == LossKind::kSquared) {
    residual = z;
    residual(label) -= 1.0;
    out.value = 0.5 * residual.squaredNorm();
  } else {
    const double zmax = z.maxCoeff();
    const Eigen::VectorXd e = (z.array() - zmax).exp();
    const double total = e.sum();
    out.value = zmax + std::log(total) - z(label);
    residual = e / total;
    residual(label) -= 1.0;
  }
  out.grad = scale * a * residual.transpose();
  return out;
}

namespace {

std::size_t shard_size(const Dataset& data, int nodes, const char* who) {
  if (nodes < 1) throw PartitionError(std::string(who) + ": need at least one node");
  if (data.size() == 0 || data.size() % static_cast<std::size_t>(nodes) != 0) {
    throw PartitionError(std::string(who) + ": " + std::to_string(data.size()) +
                         " samples cannot be split evenly across " + std::to_string(nodes) + " nodes");
  }
  if (static_cast<std::size_t>(data.features.rows()) != data.size()) {
    throw DataError(std::string(who) + ": feature rows and labels disagree");
  }
  if (data.classes < 1 || data.classes > data.dim()) {
    throw DataError(std::string(who) + ": need 1 <= classes <= feature dimension");
  }
  return data.size() / static_cast<std::size_t>(nodes);
}

Matrix dirichlet_point(Eigen::Index k, std::mt19937_64& rng) {
  std::exponential_distribution<double> expo(1.0);
  Matrix p(k, 1);
  for (Eigen::Index i = 0; i < k; ++i) p(i, 0) = expo(rng);
  return p / p.sum();
}

}  // namespace

// --- DroWeighting ------------------------------------------------------------

DroWeighting::DroWeighting(Dataset data, int nodes, LossKind loss, double logit_scale)
    : data_(std::move(data)), nodes_(nodes), loss_(loss), scale_(logit_scale) {
  shard_ = shard_size(data_, nodes_, "dro_weighting");
}

std::size_t DroWeighting::sample_count(int node) const {
  check_node(node);
  return shard_;
}

double DroWeighting::sample_value(int node, std::size_t s, const Matrix& x, const Matrix& y) const {
  const std::size_t k = row(node, s);
  const double l = classifier_loss(loss_, scale_, x, data_.features.row(k), data_.labels[k]).value;
  const double inv_n = 1.0 / nodes_;
  return nodes_ * y(node, 0) * l - (y.array() - inv_n).matrix().squaredNorm();
}

Matrix DroWeighting::sample_grad_x(int node, std::size_t s, const Matrix& x, const Matrix& y) const {
  const std::size_t k = row(node, s);
  SampleLoss l = classifier_loss(loss_, scale_, x, data_.features.row(k), data_.labels[k]);
  return (nodes_ * y(node, 0)) * l.grad;
}

Matrix DroWeighting::sample_grad_y(int node, std::size_t s, const Matrix& x, const Matrix& y) const {
  const std::size_t k = row(node, s);
  const double l = classifier_loss(loss_, scale_, x, data_.features.row(k), data_.labels[k]).value;
  Matrix g = -2.0 * (y.array() - 1.0 / nodes_).matrix();
  g(node, 0) += nodes_ * l;
  return g;
}

Matrix DroWeighting::project_dual(const Matrix& y) const {
  if (y.rows() != nodes_ || y.cols() != 1) throw DimensionError("dro_weighting: dual must be n x 1");
  return project_simplex(y.col(0));
}

Matrix DroWeighting::random_dual(std::mt19937_64& rng) const { return dirichlet_point(nodes_, rng); }

Vector DroWeighting::node_losses(const Matrix& w) const {
  Vector losses(nodes_);
  for (int i = 0; i < nodes_; ++i) {
    double sum = 0.0;
    for (std::size_t s = 0; s < shard_; ++s) {
      const std::size_t k = row(i, s);
      sum += classifier_loss(loss_, scale_, w, data_.features.row(k), data_.labels[k]).value;
    }
    losses(i) = sum / static_cast<double>(shard_);
  }
  return losses;
}

std::optional<Matrix> DroWeighting::closed_form_maximizer(const Matrix& x) const {
  const Vector shifted = Vector::Constant(nodes_, 1.0 / nodes_) + 0.5 * node_losses(x);
  return Matrix(project_simplex(shifted));
}

nlohmann::json DroWeighting::describe() const {
  return {{"kind", kind()},          {"n", nodes_},
          {"samples", data_.size()}, {"d", data_.dim()},
          {"r", data_.classes},      {"loss", to_string(loss_)},
          {"logit_scale", scale_}};
}

std::unique_ptr<DroWeighting> dro_weighting(Dataset data, int nodes, LossKind loss, double logit_scale) {
  return std::make_unique<DroWeighting>(std::move(data), nodes, loss, logit_scale);
}

// --- FairClassification ------------------------------------------------------

FairClassification::FairClassification(Dataset data, int nodes, double rho, double logit_scale)
    : data_(std::move(data)), nodes_(nodes), rho_(rho), scale_(logit_scale) {
  if (!(rho > 0.0)) throw ConfigError("fair_classification: rho must be positive");
  if (data_.classes != 3) throw DataError("fair_classification: exactly three classes are required");
  shard_ = shard_size(data_, nodes_, "fair_classification");
  class_counts_.resize(nodes_);
  for (int i = 0; i < nodes_; ++i) {
    std::array<std::size_t, 3> counts{0, 0, 0};
    for (std::size_t s = 0; s < shard_; ++s) {
      const int label = data_.labels[row(i, s)];
      if (label < 0 || label > 2) throw DataError("fair_classification: label out of range");
      ++counts[label];
    }
    for (int c = 0; c < 3; ++c) {
      if (counts[c] == 0) {
        throw DataError("fair_classification: shard " + std::to_string(i) + " has no samples of class " +
                        std::to_string(c));
      }
    }
    class_counts_[i] = counts;
  }
}

std::size_t FairClassification::sample_count(int node) const {
  check_node(node);
  return shard_;
}

double FairClassification::sample_value(int node, std::size_t s, const Matrix& x, const Matrix& y) const {
  const std::size_t k = row(node, s);
  const int c = data_.labels[k];
  const double weight = static_cast<double>(shard_) / static_cast<double>(class_counts_[node][c]);
  const double l = classifier_loss(LossKind::kSoftmaxCrossEntropy, scale_, x, data_.features.row(k), c).value;
  return weight * y(c, 0) * l - rho_ * y.squaredNorm();
}

Matrix FairClassification::sample_grad_x(int node, std::size_t s, const Matrix& x, const Matrix& y) const {
  const std::size_t k = row(node, s);
  const int c = data_.labels[k];
  const double weight = static_cast<double>(shard_) / static_cast<double>(class_counts_[node][c]);
  SampleLoss l = classifier_loss(LossKind::kSoftmaxCrossEntropy, scale_, x, data_.features.row(k), c);
  return (weight * y(c, 0)) * l.grad;
}

Matrix FairClassification::sample_grad_y(int node, std::size_t s, const Matrix& x, const Matrix& y) const {
  const std::size_t k = row(node, s);
  const int c = data_.labels[k];
  const double weight = static_cast<double>(shard_) / static_cast<double>(class_counts_[node][c]);
  const double l = classifier_loss(LossKind::kSoftmaxCrossEntropy, scale_, x, data_.features.row(k), c).value;
  Matrix g = -2.0 * rho_ * y;
  g(c, 0) += weight * l;
  return g;
}

Matrix FairClassification::project_dual(const Matrix& y) const {
  if (y.rows() != 3 || y.cols() != 1) throw DimensionError("fair_classification: dual must be 3 x 1");
  return project_simplex(y.col(0));
}

Matrix FairClassification::random_dual(std::mt19937_64& rng) const { return dirichlet_point(3, rng); }

Vector FairClassification::class_losses(int node, const Matrix& w) const {
  check_node(node);
  Vector sums = Vector::Zero(3);
  for (std::size_t s = 0; s < shard_; ++s) {
    const std::size_t k = row(node, s);
    const int c = data_.labels[k];
    sums(c) += classifier_loss(LossKind::kSoftmaxCrossEntropy, scale_, w, data_.features.row(k), c).value;
  }
  for (int c = 0; c < 3; ++c) sums(c) /= static_cast<double>(class_counts_[node][c]);
  return sums;
}

nlohmann::json FairClassification::describe() const {
  return {{"kind", kind()}, {"n", nodes_},         {"samples", data_.size()},
          {"d", data_.dim()}, {"rho", rho_},       {"logit_scale", scale_}};
}

std::unique_ptr<FairClassification> fair_classification(Dataset data, int nodes, double rho,
                                                        double logit_scale) {
  return std::make_unique<FairClassification>(std::move(data), nodes, rho, logit_scale);
}

// --- probes ------------------------------------------------------------------

LipschitzEstimate probe_lipschitz(const MinimaxProblem& problem, std::uint64_t seed, int pairs) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_node(0, problem.node_count() - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Eigen::Index d = problem.primal_rows(), r = problem.primal_cols();

  auto nearby_x = [&](const StiefelPoint& x1) {
    if (unif(rng) < 0.5) return random_stiefel(d, r, rng);
    return retract_polar(x1, random_tangent(x1, 0.01 + 0.5 * unif(rng), rng));
  };
  auto nearby_y = [&](const Matrix& y1) -> Matrix {
    if (unif(rng) < 0.5) return problem.random_dual(rng);
    const Matrix step = gaussian_matrix(y1.rows(), y1.cols(), rng);
    return problem.project_dual(y1 + (0.05 * unif(rng) + 1e-3) * step / step.norm());
  };

  LipschitzEstimate est;
  const int per_kind = std::max(1, pairs / 4);
  for (int t = 0; t < per_kind; ++t) {
    const int node = pick_node(rng);
    const StiefelPoint x1 = random_stiefel(d, r, rng);
    const StiefelPoint x2 = nearby_x(x1);
    const Matrix y = problem.random_dual(rng);
    const double dx = (x1.matrix() - x2.matrix()).norm();
    if (dx > 0.0) {
      est.l11 = std::max(est.l11, (problem.grad_x(node, x1.matrix(), y) -
                                   problem.grad_x(node, x2.matrix(), y)).norm() / dx);
      est.l21 = std::max(est.l21, (problem.grad_y(node, x1.matrix(), y) -
                                   problem.grad_y(node, x2.matrix(), y)).norm() / dx);
    }
    const Matrix y1 = problem.random_dual(rng);
    const Matrix y2 = nearby_y(y1);
    const double dy = (y1 - y2).norm();
    if (dy > 0.0) {
      est.l12 = std::max(est.l12, (problem.grad_x(node, x1.matrix(), y1) -
                                   problem.grad_x(node, x1.matrix(), y2)).norm() / dy);
      est.l22 = std::max(est.l22, (problem.grad_y(node, x1.matrix(), y1) -
                                   problem.grad_y(node, x1.matrix(), y2)).norm() / dy);
    }
  }
  est.pairs = 4 * per_kind;
  est.l = 1.5 * std::max({est.l11, est.l12, est.l21, est.l22});
  return est;
}


}  // namespace dstiefel
