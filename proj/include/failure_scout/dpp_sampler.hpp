#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "failure_scout/data_model.hpp"
#include "failure_scout/gp_voi.hpp"

namespace failure_scout {

/// Similarity kernel of the DPP conditioned on the queried samples being
/// part of the selected set, restricted to the unqueried samples.
struct ConditionalSimilarity {
  Eigen::MatrixXd s_cond;
  /// Position -> sample id, ascending.
  std::vector<SampleId> index_map;
};

/// Computes ([(S + I_u)^-1]_u)^-1 - I, where u are the unqueried positions.
///
/// Evaluated through the equivalent Schur complement
/// S_uu - S_uq S_qq^-1 S_qu, which only factorizes the queried block. When
/// that block is numerically singular the factorization is retried once with
/// 1e-6 added to the diagonal of S + I_u (so the result also gains 1e-6 on
/// its diagonal).
ConditionalSimilarity conditional_similarity(const Eigen::MatrixXd& s_full, std::span<const SampleId> queried);

/// L = theta * S* + (1 - theta) * diag(gamma), over the unqueried samples.
struct DppKernel {
  Eigen::MatrixXd s_cond;  ///< may be empty when theta == 0
  Eigen::VectorXd p_diag;
  double theta = 0.0;
  std::vector<SampleId> index_map;

  std::size_t size() const noexcept { return index_map.size(); }
  Eigen::MatrixXd mixture() const;
};

DppKernel mixture_kernel(ConditionalSimilarity similarity, const VoiScores& gamma, double theta);

/// Pure exploitation kernel: skips the similarity term entirely.
DppKernel exploitation_kernel(const VoiScores& gamma);

struct SelectionResult {
  std::vector<SampleId> chosen;  ///< ascending sample ids
  double log_det = 0.0;
  double greedy_log_det = 0.0;
  std::size_t swaps = 0;
};

/// Cardinality-constrained MAP of the L-ensemble: greedy construction with
/// incremental Cholesky updates followed by best-improvement 1-for-1 swaps
/// until no swap raises log det(L_Y) by more than 1e-10. Ties go to the
/// lowest sample id. `s` is clamped to the kernel size.
SelectionResult map_select(const DppKernel& kernel, std::size_t s);
SelectionResult map_select(const Eigen::MatrixXd& l, std::span<const SampleId> index_map, std::size_t s);

/// log det of a principal submatrix; -inf when it is not positive definite.
double log_det_subset(const Eigen::MatrixXd& l, std::span<const Eigen::Index> rows);

}  // namespace failure_scout
