#include "failure_scout/gp_voi.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "failure_scout/errors.hpp"

namespace failure_scout {

namespace {
constexpr double kVarianceTolerance = 1e-8;
}

GpState::GpState(std::shared_ptr<const Eigen::MatrixXd> gram, double jitter, GpBounds bounds)
    : gram_(std::move(gram)), jitter_(jitter), bounds_(bounds) {
  if (!gram_ || gram_->rows() != gram_->cols()) throw DimensionError("GP prior needs a square Gram matrix");
  if (!(bounds_.lower < 0.0 && bounds_.upper > 0.0) || !std::isfinite(bounds_.lower) || !std::isfinite(bounds_.upper))
    throw ParameterError("GP bounds must satisfy -inf < L < 0 < U < inf");
  if (!(jitter_ >= 0.0)) throw ParameterError("jitter must be non-negative");
  position_.assign(n(), -1);
}

void GpState::record_feedback(SampleId id, bool misclassified) {
  if (id >= n()) throw ParameterError("sample id " + std::to_string(id) + " out of range");
  if (position_[id] >= 0) throw DuplicateQueryError("sample " + std::to_string(id) + " was already queried");
  position_[id] = static_cast<std::ptrdiff_t>(queried_.size());
  queried_.push_back(id);
  observed_.push_back(misclassified ? bounds_.upper : bounds_.lower);
}

void GpState::recalibrate_pattern(std::span<const SampleId> members) {
  for (SampleId id : members)
    if (id >= n() || position_[id] < 0)
      throw ConsistencyError("pattern member " + std::to_string(id) + " has not been queried");
  for (SampleId id : members) observed_[static_cast<std::size_t>(position_[id])] = bounds_.lower;
}

double GpState::observed_value(SampleId id) const {
  if (id >= n() || position_[id] < 0) throw ConsistencyError("sample " + std::to_string(id) + " has not been queried");
  return observed_[static_cast<std::size_t>(position_[id])];
}

Posterior posterior(const GpState& state) {
  const auto& k = state.gram();
  const std::size_t n = state.n();
  Posterior post;
  for (SampleId i = 0; i < n; ++i)
    if (!state.is_queried(i)) post.ids.push_back(i);
  const auto u = static_cast<Eigen::Index>(post.ids.size());
  const auto& queried = state.queried();
  const auto t = static_cast<Eigen::Index>(queried.size());

  post.mean = Eigen::VectorXd::Zero(u);
  post.var.resize(u);
  for (Eigen::Index a = 0; a < u; ++a) post.var(a) = k(post.ids[a], post.ids[a]);
  if (t == 0 || u == 0) return post;

  Eigen::MatrixXd k_tt(t, t);
  for (Eigen::Index b = 0; b < t; ++b)
    for (Eigen::Index a = 0; a < t; ++a) k_tt(a, b) = k(queried[a], queried[b]);
  k_tt.diagonal().array() += state.jitter();

  Eigen::MatrixXd k_tu(t, u);
  for (Eigen::Index b = 0; b < u; ++b)
    for (Eigen::Index a = 0; a < t; ++a) k_tu(a, b) = k(queried[a], post.ids[b]);

  const Eigen::LLT<Eigen::MatrixXd> llt(k_tt);
  if (llt.info() != Eigen::Success)
    throw NumericalError("Cholesky factorization of the queried Gram block failed despite jitter " +
                         std::to_string(state.jitter()));

  const Eigen::Map<const Eigen::VectorXd> g(state.observed().data(), t);
  const Eigen::MatrixXd v = llt.matrixL().solve(k_tu);
  const Eigen::VectorXd w = llt.matrixL().solve(g);
  post.mean.noalias() = v.transpose() * w;
  post.var -= v.colwise().squaredNorm().transpose();

  for (Eigen::Index a = 0; a < u; ++a) {
    if (!std::isfinite(post.var(a)) || !std::isfinite(post.mean(a)))
      throw NumericalError("non-finite posterior at sample " + std::to_string(post.ids[a]));
    if (post.var(a) < 0.0) {
      if (post.var(a) < -kVarianceTolerance)
        throw NumericalError("negative posterior variance " + std::to_string(post.var(a)) + " at sample " +
                             std::to_string(post.ids[a]));
      post.var(a) = 0.0;
    }
  }
  return post;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sigmoid_curvature(double a) { return a * (1.0 - a) * (1.0 - 2.0 * a); }

double voi_gamma(double mean, double var, bool* fallback) {
  const double alpha = sigmoid(mean);
  double gamma = alpha + 0.5 * var * sigmoid_curvature(alpha);
  const bool used = !(gamma > 0.0);
  if (used) gamma = alpha;
  if (fallback) *fallback = used;
  return std::min(gamma, 1.0);
}

VoiScores voi_scores(const Posterior& post) {
  VoiScores out;
  out.ids = post.ids;
  out.gamma.resize(post.mean.size());
  out.used_fallback.resize(static_cast<std::size_t>(post.mean.size()));
  for (Eigen::Index a = 0; a < post.mean.size(); ++a) {
    bool fallback = false;
    out.gamma(a) = voi_gamma(post.mean(a), post.var(a), &fallback);
    out.used_fallback[static_cast<std::size_t>(a)] = fallback;
  }
  return out;
}

}  // namespace failure_scout
