#include "failure_scout/dpp_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>

#include "failure_scout/errors.hpp"

namespace failure_scout {

namespace {

constexpr double kRetryJitter = 1e-6;
constexpr double kMinRcond = 1e-8;
constexpr double kSwapThreshold = 1e-10;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

Eigen::MatrixXd principal(const Eigen::MatrixXd& m, std::span<const Eigen::Index> rows) {
  const auto k = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd out(k, k);
  for (Eigen::Index b = 0; b < k; ++b)
    for (Eigen::Index a = 0; a < k; ++a) out(a, b) = m(rows[a], rows[b]);
  return out;
}

}  // namespace

ConditionalSimilarity conditional_similarity(const Eigen::MatrixXd& s_full, std::span<const SampleId> queried) {
  const auto n = static_cast<std::size_t>(s_full.rows());
  if (s_full.rows() != s_full.cols()) throw DimensionError("similarity matrix must be square");
  std::vector<bool> is_queried(n, false);
  for (SampleId id : queried) {
    if (id >= n) throw ParameterError("queried id " + std::to_string(id) + " out of range");
    is_queried[id] = true;
  }
  ConditionalSimilarity out;
  std::vector<Eigen::Index> q_rows;
  for (SampleId i = 0; i < n; ++i) {
    if (is_queried[i])
      q_rows.push_back(static_cast<Eigen::Index>(i));
    else
      out.index_map.push_back(i);
  }
  std::vector<Eigen::Index> u_rows(out.index_map.begin(), out.index_map.end());
  out.s_cond = principal(s_full, u_rows);
  if (q_rows.empty() || u_rows.empty()) return out;

  const auto t = static_cast<Eigen::Index>(q_rows.size());
  const auto u = static_cast<Eigen::Index>(u_rows.size());
  Eigen::MatrixXd s_qq = principal(s_full, q_rows);
  Eigen::MatrixXd s_qu(t, u);
  for (Eigen::Index b = 0; b < u; ++b)
    for (Eigen::Index a = 0; a < t; ++a) s_qu(a, b) = s_full(q_rows[a], u_rows[b]);

  Eigen::LLT<Eigen::MatrixXd> llt(s_qq);
  double added = 0.0;
  if (llt.info() != Eigen::Success || llt.rcond() < kMinRcond) {
    added = kRetryJitter;
    s_qq.diagonal().array() += added;
    llt.compute(s_qq);
    if (llt.info() != Eigen::Success)
      throw NumericalError("conditioning the similarity kernel failed even with jitter");
  }
  const Eigen::MatrixXd v = llt.matrixL().solve(s_qu);
  out.s_cond.selfadjointView<Eigen::Lower>().rankUpdate(v.transpose(), -1.0);
  out.s_cond.triangularView<Eigen::StrictlyUpper>() = out.s_cond.transpose();
  if (added > 0.0) out.s_cond.diagonal().array() += added;
  if (!out.s_cond.allFinite()) throw NumericalError("conditional similarity has non-finite entries");
  return out;
}

Eigen::MatrixXd DppKernel::mixture() const {
  const auto k = static_cast<Eigen::Index>(size());
  Eigen::MatrixXd l = theta > 0.0 ? Eigen::MatrixXd(theta * s_cond) : Eigen::MatrixXd::Zero(k, k);
  l.diagonal() += (1.0 - theta) * p_diag;
  return l;
}

DppKernel mixture_kernel(ConditionalSimilarity similarity, const VoiScores& gamma, double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw ParameterError("mixture weight must lie in [0, 1]");
  if (similarity.index_map != gamma.ids) throw DimensionError("similarity and VoI cover different samples");
  const auto k = static_cast<Eigen::Index>(gamma.ids.size());
  if (similarity.s_cond.rows() != k || similarity.s_cond.cols() != k)
    throw DimensionError("similarity matrix size differs from the VoI vector");
  return DppKernel{std::move(similarity.s_cond), gamma.gamma, theta, std::move(similarity.index_map)};
}

DppKernel exploitation_kernel(const VoiScores& gamma) { return DppKernel{{}, gamma.gamma, 0.0, gamma.ids}; }

double log_det_subset(const Eigen::MatrixXd& l, std::span<const Eigen::Index> rows) {
  if (rows.empty()) return 0.0;
  const Eigen::LLT<Eigen::MatrixXd> llt(principal(l, rows));
  if (llt.info() != Eigen::Success) return kNegInf;
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

SelectionResult map_select(const DppKernel& kernel, std::size_t s) {
  return map_select(kernel.mixture(), kernel.index_map, s);
}

SelectionResult map_select(const Eigen::MatrixXd& l, std::span<const SampleId> index_map, std::size_t s) {
  const auto n = l.rows();
  if (l.cols() != n || static_cast<std::size_t>(n) != index_map.size())
    throw DimensionError("kernel and index map sizes disagree");
  if (!l.allFinite()) throw NumericalError("DPP kernel has non-finite entries");
  s = std::min(s, static_cast<std::size_t>(n));
  SelectionResult result;
  if (s == 0) return result;
  const auto k = static_cast<Eigen::Index>(s);

  // Greedy: d2(i) is the squared residual of item i after projecting out the
  // chosen set; its log is the marginal log-det gain.
  Eigen::MatrixXd factors = Eigen::MatrixXd::Zero(k, n);
  Eigen::VectorXd d2 = l.diagonal();
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  std::vector<Eigen::Index> chosen;
  double log_det = 0.0;
  for (Eigen::Index step = 0; step < k; ++step) {
    Eigen::Index best = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || d2(i) > d2(best) || (d2(i) == d2(best) && index_map[i] < index_map[best])) best = i;
    }
    taken[static_cast<std::size_t>(best)] = true;
    chosen.push_back(best);
    log_det += safe_log(d2(best));
    if (step + 1 == k) break;
    const double pivot = d2(best) > 0.0 ? std::sqrt(d2(best)) : 0.0;
    Eigen::VectorXd e = l.col(best);
    if (step > 0) e.noalias() -= factors.topRows(step).transpose() * factors.col(best).head(step);
    if (pivot > 0.0)
      e /= pivot;
    else
      e.setZero();
    factors.row(step) = e.transpose();
    d2.array() -= e.array().square();
  }
  result.greedy_log_det = log_det;

  // Local search over 1-for-1 swaps, best improvement first.
  const Eigen::VectorXd diag = l.diagonal();
  const std::size_t max_swaps = 10 * static_cast<std::size_t>(n) + 100;
  while (result.swaps < max_swaps) {
    std::sort(chosen.begin(), chosen.end(), [&](Eigen::Index a, Eigen::Index b) { return index_map[a] < index_map[b]; });
    double best_value = log_det;
    Eigen::Index best_out = -1, best_in = -1;
    for (Eigen::Index r = 0; r < k; ++r) {
      std::vector<Eigen::Index> rest;
      for (Eigen::Index q = 0; q < k; ++q)
        if (q != r) rest.push_back(chosen[static_cast<std::size_t>(q)]);
      Eigen::VectorXd score = diag;
      double rest_log_det = 0.0;
      if (!rest.empty()) {
        const Eigen::LLT<Eigen::MatrixXd> llt(principal(l, rest));
        if (llt.info() != Eigen::Success) continue;  // every superset is singular too
        rest_log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        Eigen::MatrixXd cross(static_cast<Eigen::Index>(rest.size()), n);
        for (std::size_t a = 0; a < rest.size(); ++a) cross.row(static_cast<Eigen::Index>(a)) = l.row(rest[a]);
        const Eigen::MatrixXd z = llt.matrixL().solve(cross);
        score -= z.colwise().squaredNorm().transpose();
      }
      for (Eigen::Index j = 0; j < n; ++j) {
        if (taken[static_cast<std::size_t>(j)]) continue;
        const double value = rest_log_det + safe_log(score(j));
        if (value <= log_det + kSwapThreshold) continue;
        if (best_out < 0 || value > best_value) {
          best_value = value;
          best_out = r;
          best_in = j;
        }
      }
    }
    if (best_out < 0) break;
    taken[static_cast<std::size_t>(chosen[static_cast<std::size_t>(best_out)])] = false;
    taken[static_cast<std::size_t>(best_in)] = true;
    chosen[static_cast<std::size_t>(best_out)] = best_in;
    log_det = best_value;
    ++result.swaps;
  }

  result.log_det = log_det;
  for (Eigen::Index i : chosen) result.chosen.push_back(index_map[i]);
  std::sort(result.chosen.begin(), result.chosen.end());
  return result;
}

}  // namespace failure_scout
