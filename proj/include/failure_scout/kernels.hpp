#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "failure_scout/data_model.hpp"

namespace failure_scout {

/// Default separation parameter for bandwidth selection.
inline const double kDefaultDelta = std::sqrt(2.0) * 1e-6;
inline constexpr double kDefaultJitter = 1e-6;

/// Per-pseudolabel feature mean and covariance, both with 1/N_y normalization.
struct ClassMoments {
  std::vector<Eigen::VectorXd> mean;
  std::vector<Eigen::MatrixXd> cov;
  std::vector<std::size_t> count;

  std::size_t classes() const noexcept { return mean.size(); }
  /// ||mu_a - mu_b||^2 + ||Sigma_a - Sigma_b||_F^2 for every class pair.
  Eigen::MatrixXd label_distances() const;
};

struct KernelConfig {
  double h_x = 1.0;
  double h_y = 1.0;
  double delta = kDefaultDelta;
  double jitter = kDefaultJitter;
};

/// Gram matrix of the feature x pseudolabel product kernel. Unit diagonal,
/// jitter is *not* included in `k`; consumers add it before factorizing.
struct GramMatrix {
  Eigen::MatrixXd k;
  KernelConfig config;
};

struct Bandwidths {
  double h_x = 1.0;
  double h_y = 1.0;
  double d_x = 0.0;
  double d_y = 0.0;
};

ClassMoments class_moments(const Dataset& ds);

/// Pairwise squared Euclidean distances between rows, exact zeros on the diagonal.
Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& points);

/// exp(-||x_i - x_j||^2 / (2 h_x^2)).
Eigen::MatrixXd feature_gram(const Eigen::MatrixXd& points, double h_x);

/// K_ij = K_X(x_i, x_j) * K_Y(y_i, y_j) with the moment-embedded label kernel.
GramMatrix gram_matrix(const Dataset& ds, const ClassMoments& moments, const KernelConfig& cfg);

/// Bandwidths from the mean pairwise feature and label distances, splitting
/// the budget ln((n-1)/delta^2) equally between the two terms. With d_y = 0
/// the label kernel is constant, so h_y = 1 and h_x takes the whole budget.
Bandwidths equalized_bandwidths(std::size_t n, double d_x, double d_y, double delta);

Bandwidths select_bandwidths(const Dataset& ds, const ClassMoments& moments, double delta = kDefaultDelta);

}  // namespace failure_scout
