#include "failure_scout/kernels.hpp"

#include <cmath>

#include "failure_scout/errors.hpp"

namespace failure_scout {

Eigen::MatrixXd ClassMoments::label_distances() const {
  const auto c = static_cast<Eigen::Index>(classes());
  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(c, c);
  for (Eigen::Index a = 0; a < c; ++a) {
    for (Eigen::Index b = a + 1; b < c; ++b) {
      const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
      const double value = (mean[ua] - mean[ub]).squaredNorm() + (cov[ua] - cov[ub]).squaredNorm();
      dist(a, b) = dist(b, a) = value;
    }
  }
  return dist;
}

ClassMoments class_moments(const Dataset& ds) {
  const auto c = static_cast<std::size_t>(ds.c());
  const auto d = static_cast<Eigen::Index>(ds.d());
  ClassMoments m;
  m.mean.assign(c, Eigen::VectorXd::Zero(d));
  m.cov.assign(c, Eigen::MatrixXd::Zero(d, d));
  m.count.assign(c, 0);

  const auto& x = ds.embeddings();
  const auto labels = ds.pseudolabels();
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    m.mean[y] += x.row(static_cast<Eigen::Index>(i)).transpose();
    ++m.count[y];
  }
  for (std::size_t y = 0; y < c; ++y) {
    if (m.count[y] == 0) throw EmptyClassError(static_cast<int>(y));
    m.mean[y] /= static_cast<double>(m.count[y]);
  }
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    const Eigen::VectorXd centered = x.row(static_cast<Eigen::Index>(i)).transpose() - m.mean[y];
    m.cov[y].noalias() += centered * centered.transpose();
  }
  for (std::size_t y = 0; y < c; ++y) m.cov[y] /= static_cast<double>(m.count[y]);
  return m;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& points) {
  const Eigen::VectorXd norms = points.rowwise().squaredNorm();
  Eigen::MatrixXd dist = -2.0 * (points * points.transpose());
  dist.colwise() += norms;
  dist.rowwise() += norms.transpose();
  dist = dist.cwiseMax(0.0);
  dist.triangularView<Eigen::StrictlyLower>() = dist.transpose();
  dist.diagonal().setZero();
  return dist;
}

Eigen::MatrixXd feature_gram(const Eigen::MatrixXd& points, double h_x) {
  if (!(h_x > 0.0)) throw ParameterError("feature bandwidth must be positive");
  if (!points.allFinite()) throw DataError("embeddings contain non-finite values");
  return (squared_distances(points) * (-0.5 / (h_x * h_x))).array().exp().matrix();
}

GramMatrix gram_matrix(const Dataset& ds, const ClassMoments& moments, const KernelConfig& cfg) {
  if (!(cfg.h_x > 0.0) || !(cfg.h_y > 0.0)) throw ParameterError("kernel bandwidths must be positive");
  if (!ds.embeddings().allFinite()) throw DataError("embeddings contain non-finite values");
  if (moments.classes() != static_cast<std::size_t>(ds.c()))
    throw DimensionError("class moments do not match the dataset class count");

  Eigen::MatrixXd exponent = squared_distances(ds.embeddings()) * (-0.5 / (cfg.h_x * cfg.h_x));
  const Eigen::MatrixXd label_dist = moments.label_distances() * (-0.5 / (cfg.h_y * cfg.h_y));
  const auto labels = ds.pseudolabels();
  const auto n = static_cast<Eigen::Index>(ds.n());
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) exponent(i, j) += label_dist(labels[i], labels[j]);
  GramMatrix g{exponent.array().exp().matrix(), cfg};
  g.k.diagonal().setOnes();
  return g;
}

Bandwidths equalized_bandwidths(std::size_t n, double d_x, double d_y, double delta) {
  if (n < 2) throw InsufficientDataError("bandwidth selection needs at least 2 samples");
  if (!(delta > 0.0) || delta >= std::sqrt(static_cast<double>(n - 1)))
    throw ParameterError("delta must lie in (0, sqrt(n-1)); got " + std::to_string(delta));
  const double budget = std::log(static_cast<double>(n - 1) / (delta * delta));
  Bandwidths b{1.0, 1.0, d_x, d_y};
  if (d_y > 0.0) {
    b.h_y = std::sqrt(2.0 * d_y / budget);
    if (d_x > 0.0) b.h_x = std::sqrt(2.0 * d_x / budget);
  } else if (d_x > 0.0) {
    b.h_x = std::sqrt(d_x / budget);
  }
  return b;
}

Bandwidths select_bandwidths(const Dataset& ds, const ClassMoments& moments, double delta) {
  const std::size_t n = ds.n();
  if (n < 2) throw InsufficientDataError("bandwidth selection needs at least 2 samples");
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);

  // sum_{i<j} ||x_i - x_j||^2 = n * sum_i ||x_i - xbar||^2
  const auto& x = ds.embeddings();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const double scatter = (x.rowwise() - mean).squaredNorm();
  const double d_x = static_cast<double>(n) * scatter / pairs;

  const Eigen::MatrixXd label_dist = moments.label_distances();
  double label_sum = 0.0;
  for (std::size_t a = 0; a < moments.classes(); ++a)
    for (std::size_t b = a + 1; b < moments.classes(); ++b)
      label_sum += static_cast<double>(moments.count[a]) * static_cast<double>(moments.count[b]) *
                   label_dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  return equalized_bandwidths(n, d_x, label_sum / pairs, delta);
}

}  // namespace failure_scout
