#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "failure_scout/data_model.hpp"
#include "failure_scout/engine.hpp"
#include "failure_scout/pattern_graph.hpp"

namespace failure_scout {

struct BenchmarkDataset {
  std::string name;
  std::string group;
  Dataset data;  ///< standardized, with true labels
  PatternAssignment truth;
  std::shared_ptr<const MutualKnnGraph> graph;  ///< built on demand when null
};

/// One (dataset, config, seed) run.
struct BenchmarkCell {
  std::string dataset;
  std::string group;
  Strategy strategy = Strategy::DS;
  double theta = 0.0;
  std::uint64_t seed = 0;
  std::optional<SessionResult> result;
  std::optional<Metrics> metrics;
  std::string rounds_csv;  ///< per-round rows without header
  std::string error;
  double seconds = 0.0;
};

struct SummaryStat {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Aggregate over a set of cells sharing a key.
struct BenchmarkRow {
  std::string scope;  ///< dataset name, group name, or "overall"
  Strategy strategy = Strategy::DS;
  double theta = 0.0;
  std::size_t runs = 0;
  std::size_t failures = 0;
  SummaryStat sensitivity;
  std::vector<SummaryStat> effectiveness;  ///< aligned with the report cutoffs
};

struct BenchmarkReport {
  std::vector<double> cutoffs;
  std::vector<BenchmarkCell> cells;
  std::vector<BenchmarkRow> per_dataset;
  std::vector<BenchmarkRow> per_group;
  std::vector<BenchmarkRow> overall;

  const BenchmarkRow* find(const std::vector<BenchmarkRow>& rows, const std::string& scope, Strategy s,
                           double theta) const;
};

/// Runs every dataset x config cell. Uniform sampling repeats over all
/// `seeds`; directed sampling is deterministic and runs once with the first
/// seed. Cell failures are recorded without stopping other cells.
BenchmarkReport run_benchmark(std::span<BenchmarkDataset> datasets, std::span<const SessionConfig> configs,
                              std::span<const std::uint64_t> seeds, std::span<const double> cutoffs,
                              unsigned threads = 0);

/// Writes `<prefix>_rounds.csv`, `<prefix>_summary.csv` and `<prefix>.json`.
void write_benchmark(const BenchmarkReport& report, const std::filesystem::path& prefix);
nlohmann::ordered_json to_json(const BenchmarkReport& report);
std::string summary_csv(const BenchmarkReport& report);

/// Synthetic suite with one group per target SNR (noise count derived from
/// the planted signal) and one dataset per seed.
struct SuiteOptions {
  SyntheticSpec base;
  std::vector<std::pair<std::string, double>> snr_groups = {{"low", 0.5}, {"medium", 1.0}, {"high", 2.0}};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::size_t k_nn = 10;
  std::size_t m_threshold = 10;
};

std::vector<BenchmarkDataset> synthetic_suite(const SuiteOptions& options);

}  // namespace failure_scout
