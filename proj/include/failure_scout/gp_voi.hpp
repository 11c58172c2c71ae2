#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "failure_scout/data_model.hpp"
#include "failure_scout/kernels.hpp"

namespace failure_scout {

/// Finite stand-ins for g = -inf / +inf at correctly / incorrectly
/// classified samples. Must satisfy lower < 0 < upper.
struct GpBounds {
  double lower = -3.0;
  double upper = 3.0;
};

/// Zero-mean GP belief over the latent misclassification score g.
///
/// Holds the prior Gram matrix and the observed values at queried samples in
/// query order. Observations are U for misclassified and L otherwise; members
/// of a confirmed pattern are reset to L so the sampler moves on.
class GpState {
 public:
  GpState(std::shared_ptr<const Eigen::MatrixXd> gram, double jitter, GpBounds bounds = {});

  void record_feedback(SampleId id, bool misclassified);
  void recalibrate_pattern(std::span<const SampleId> members);

  std::size_t n() const noexcept { return static_cast<std::size_t>(gram_->rows()); }
  const Eigen::MatrixXd& gram() const noexcept { return *gram_; }
  double jitter() const noexcept { return jitter_; }
  const GpBounds& bounds() const noexcept { return bounds_; }
  const std::vector<SampleId>& queried() const noexcept { return queried_; }
  const std::vector<double>& observed() const noexcept { return observed_; }
  bool is_queried(SampleId id) const { return position_.at(id) >= 0; }
  double observed_value(SampleId id) const;

 private:
  std::shared_ptr<const Eigen::MatrixXd> gram_;
  double jitter_;
  GpBounds bounds_;
  std::vector<SampleId> queried_;
  std::vector<double> observed_;
  std::vector<std::ptrdiff_t> position_;
};

/// Conditional mean and marginal variance of g at the unqueried samples,
/// listed in ascending id order.
struct Posterior {
  std::vector<SampleId> ids;
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

Posterior posterior(const GpState& state);

/// Second-order estimate of E[sigmoid(g)] per unqueried sample.
struct VoiScores {
  std::vector<SampleId> ids;
  Eigen::VectorXd gamma;
  std::vector<bool> used_fallback;
};

VoiScores voi_scores(const Posterior& post);

double sigmoid(double x);

/// sigmoid''(x) expressed through a = sigmoid(x): a(1-a)(1-2a).
double sigmoid_curvature(double a);

/// gamma = a + var * sigmoid''/2 with a = sigmoid(mean); falls back to `a`
/// when that is not positive, then caps at 1. Sets *fallback accordingly.
double voi_gamma(double mean, double var, bool* fallback = nullptr);

}  // namespace failure_scout
