#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "failure_scout/data_model.hpp"
#include "failure_scout/dpp_sampler.hpp"
#include "failure_scout/gp_voi.hpp"
#include "failure_scout/kernels.hpp"
#include "failure_scout/pattern_graph.hpp"

namespace failure_scout {

/// DS: directed sampling (GP + conditional DPP). US: uniform sampling.
enum class Strategy { DS, US };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

struct SessionConfig {
  std::size_t batch_size = 25;
  /// Maximum fraction of the dataset to query, in (0, 1].
  double budget = 1.0;
  /// Optional hard cap on the number of rounds.
  std::optional<std::size_t> max_rounds;
  double theta = 0.25;
  std::size_t m_threshold = 10;
  std::size_t k_nn = 7;
  double delta = kDefaultDelta;
  GpBounds bounds;
  double jitter = kDefaultJitter;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::DS;

  void validate() const;
  /// Number of queries the budget allows on a dataset of size n.
  std::size_t query_cap(std::size_t n) const;
};

nlohmann::ordered_json to_json(const SessionConfig& cfg);

/// Answers true labels for a batch of sample ids.
class Annotator {
 public:
  virtual ~Annotator() = default;
  virtual std::vector<int> annotate(std::span<const SampleId> ids) = 0;
};

/// Benchmark annotator backed by the dataset's hidden true labels.
class OracleAnnotator final : public Annotator {
 public:
  explicit OracleAnnotator(const Dataset& ds) : ds_(ds) {}
  std::vector<int> annotate(std::span<const SampleId> ids) override;

 private:
  const Dataset& ds_;
};

struct RoundLog {
  int round = 0;
  std::vector<SampleId> chosen;
  std::vector<bool> misclassified;
  std::vector<std::vector<SampleId>> new_patterns;
  std::size_t queried_cum = 0;
};

struct SessionResult {
  std::string dataset;
  SessionConfig config;
  std::size_t n = 0;
  Bandwidths bandwidths;
  std::vector<RoundLog> rounds;
  std::vector<ConfirmedPattern> confirmed;
  bool aborted = false;
  std::string error;

  std::size_t queried() const noexcept { return rounds.empty() ? 0 : rounds.back().queried_cum; }
};

/// One sequential recommendation session, driven a round at a time.
///
/// The session sees embeddings, pseudolabels and annotator feedback only;
/// true labels enter exclusively through `submit`. Call `propose` to obtain
/// the next batch and `submit` with that batch's true labels to advance.
class Session {
 public:
  Session(const Dataset& ds, std::shared_ptr<const MutualKnnGraph> graph, SessionConfig cfg);
  Session(const Dataset& ds, SessionConfig cfg);

  /// Computes the next batch (no-op when one is already pending).
  const std::vector<SampleId>& propose();
  /// Feeds back the true labels of the pending batch, aligned with `pending()`.
  const RoundLog& submit(std::span<const int> true_labels);

  bool finished() const noexcept;
  const std::vector<SampleId>& pending() const noexcept { return pending_; }
  int rounds_completed() const noexcept { return static_cast<int>(rounds_.size()); }
  std::size_t queried_count() const noexcept { return gp_.queried().size(); }
  std::size_t n() const noexcept { return pseudolabels_.size(); }
  int n_classes() const noexcept { return n_classes_; }
  int pseudolabel(SampleId id) const { return pseudolabels_.at(id); }
  const SessionConfig& config() const noexcept { return cfg_; }
  const Bandwidths& bandwidths() const noexcept { return bandwidths_; }
  const GpState& gp() const noexcept { return gp_; }
  const MutualKnnGraph& graph() const noexcept { return *graph_; }
  const DetectionState& detection() const noexcept { return detection_; }
  const std::vector<RoundLog>& rounds() const noexcept { return rounds_; }
  const std::vector<SampleId>& queried_misclassified() const noexcept { return queried_misclassified_; }

  SessionResult result(std::string dataset_name = {}) const;

 private:
  Session(const Dataset& ds, std::shared_ptr<const MutualKnnGraph> graph, SessionConfig cfg,
          const ClassMoments& moments);

  std::vector<SampleId> directed_batch(std::size_t size) const;
  std::vector<SampleId> uniform_batch(std::size_t size);

  SessionConfig cfg_;
  std::shared_ptr<const MutualKnnGraph> graph_;
  std::vector<int> pseudolabels_;
  int n_classes_ = 0;
  Bandwidths bandwidths_;
  std::shared_ptr<const Eigen::MatrixXd> similarity_;
  GpState gp_;
  DetectionState detection_;
  std::mt19937_64 rng_;
  std::vector<SampleId> remaining_;  // uniform strategy pool
  std::vector<SampleId> pending_;
  std::vector<SampleId> queried_misclassified_;
  std::vector<RoundLog> rounds_;
};

/// Runs a full session against an annotator. Annotator failures abort the
/// session; the partial result carries `aborted` and the error text.
SessionResult run_session(const Dataset& ds, std::shared_ptr<const MutualKnnGraph> graph, const SessionConfig& cfg,
                          Annotator& annotator, std::string dataset_name = {});
SessionResult run_session(const Dataset& ds, const PatternAssignment& truth, const SessionConfig& cfg,
                          Annotator& annotator, std::string dataset_name = {});

struct Metrics {
  /// Queried fraction at the first confirmation matching a ground-truth
  /// pattern; 1.0 when none was confirmed.
  double sensitivity = 1.0;
  std::optional<std::size_t> first_pattern_queried_at;
  std::vector<double> cutoffs;
  std::vector<double> effectiveness;
  int patterns_detected = 0;
  int p = 0;
  /// Queried count at which each ground-truth pattern was first matched.
  std::vector<std::optional<std::size_t>> detected_at;
};

Metrics evaluate_metrics(const SessionResult& result, const PatternAssignment& truth, std::span<const double> cutoffs);

inline constexpr const char* kRoundCsvHeader =
    "dataset,strategy,theta,seed,round,queried_cum,new_misclassified,patterns_confirmed_cum,first_pattern_queried_at";

/// Per-round CSV rows (no header). `truth` supplies first_pattern_queried_at.
std::string round_csv_rows(const SessionResult& result, const PatternAssignment* truth);

nlohmann::ordered_json session_summary(const SessionResult& result, const PatternAssignment* truth,
                                       std::span<const double> cutoffs);

}  // namespace failure_scout
