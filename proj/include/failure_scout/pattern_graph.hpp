#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "failure_scout/data_model.hpp"

namespace failure_scout {

/// Undirected graph where i~j iff each is among the other's k nearest
/// neighbours (Euclidean). Adjacency lists are sorted ascending.
class MutualKnnGraph {
 public:
  MutualKnnGraph() = default;
  MutualKnnGraph(std::size_t k_nn, std::vector<std::vector<SampleId>> adjacency);

  std::size_t n() const noexcept { return adjacency_.size(); }
  std::size_t k_nn() const noexcept { return k_nn_; }
  std::span<const SampleId> neighbors(SampleId i) const { return adjacency_.at(i); }
  bool has_edge(SampleId i, SampleId j) const;
  std::size_t edge_count() const noexcept;

 private:
  std::size_t k_nn_ = 0;
  std::vector<std::vector<SampleId>> adjacency_;
};

/// Distance ties are broken by ascending sample id.
MutualKnnGraph build_mutual_knn(const Eigen::MatrixXd& points, std::size_t k_nn);
MutualKnnGraph build_mutual_knn(const Dataset& ds, std::size_t k_nn);

/// Connected components of the subgraph induced by `mask`. Members are
/// sorted; components are ordered by their smallest member.
std::vector<std::vector<SampleId>> induced_components(const MutualKnnGraph& g, const std::vector<bool>& mask);

/// Ground-truth failure patterns: pattern ids 1..p, -1 for everything else.
struct PatternAssignment {
  std::vector<int> pattern_of;
  int p = 0;
  std::size_t k_nn = 0;
  std::size_t m_threshold = 0;

  std::vector<SampleId> members(int pattern) const;
};

PatternAssignment ground_truth_patterns(const MutualKnnGraph& g, const std::vector<bool>& misclassified,
                                        std::size_t m_threshold);

void save_truth(const PatternAssignment& truth, const std::filesystem::path& path);
PatternAssignment load_truth(const std::filesystem::path& path);

struct ConfirmedPattern {
  std::vector<SampleId> members;
  int round = 0;
};

/// Online confirmation bookkeeping owned by one session.
struct DetectionState {
  std::vector<ConfirmedPattern> confirmed;
  std::vector<bool> consumed;

  explicit DetectionState(std::size_t n = 0) : consumed(n, false) {}
};

/// Components of (queried_misclassified minus consumed) with at least
/// `m_threshold` members. New components are appended to `state` and their
/// members marked consumed.
std::vector<std::vector<SampleId>> detect_new_patterns(const MutualKnnGraph& g, DetectionState& state,
                                                       std::span<const SampleId> queried_misclassified,
                                                       std::size_t m_threshold, int round = 0);

/// Ground-truth pattern a detected component stands for: the most frequent
/// pattern id among its members (ties to the lowest id). Returns -1 when
/// no-pattern members outnumber every single pattern.
int match_pattern(const PatternAssignment& truth, std::span<const SampleId> members);

}  // namespace failure_scout
