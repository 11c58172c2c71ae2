#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace failure_scout {

using SampleId = std::size_t;

/// Opaque display payload forwarded to the annotation UI.
struct Display {
  std::optional<double> x2d;
  std::optional<double> y2d;
  std::optional<std::string> image_url;

  bool operator==(const Display&) const = default;
};

struct Sample {
  SampleId id = 0;
  Eigen::VectorXd embedding;
  int pseudolabel = 0;
  std::optional<int> true_label;
  std::optional<Display> display;
};

/// Immutable collection of samples sharing one embedding dimension.
///
/// Embeddings are stored row-wise in an n x d matrix; sample ids are the row
/// indices 0..n-1. True labels are oracle-only information: the sampler never
/// reads them, only annotators and the evaluator do.
class Dataset {
 public:
  Dataset() = default;

  /// Builds from samples whose ids must be 0..n-1 in order. When
  /// `n_classes` is zero the class count is inferred from the labels.
  Dataset(std::vector<Sample> samples, int n_classes = 0, bool standardized = false);

  Dataset(Eigen::MatrixXd embeddings, std::vector<int> pseudolabels,
          std::vector<std::optional<int>> true_labels, std::vector<std::optional<Display>> display,
          int n_classes, bool standardized);

  std::size_t n() const noexcept { return static_cast<std::size_t>(embeddings_.rows()); }
  std::size_t d() const noexcept { return static_cast<std::size_t>(embeddings_.cols()); }
  int c() const noexcept { return n_classes_; }
  bool standardized() const noexcept { return standardized_; }

  const Eigen::MatrixXd& embeddings() const noexcept { return embeddings_; }
  std::span<const int> pseudolabels() const noexcept { return pseudolabels_; }
  const std::optional<int>& true_label(SampleId id) const { return true_labels_.at(id); }
  const std::optional<Display>& display(SampleId id) const { return display_.at(id); }

  Sample sample(SampleId id) const;
  bool has_all_true_labels() const noexcept;

  /// true where true_label != pseudolabel. Throws MissingLabelError if any
  /// sample lacks a true label.
  std::vector<bool> misclassified_mask() const;

  /// Same samples with replaced embeddings (used by standardization).
  Dataset with_embeddings(Eigen::MatrixXd embeddings, bool standardized) const;

  bool operator==(const Dataset& other) const;

 private:
  void validate() const;
  std::size_t n_rows() const noexcept;

  Eigen::MatrixXd embeddings_;
  std::vector<int> pseudolabels_;
  std::vector<std::optional<int>> true_labels_;
  std::vector<std::optional<Display>> display_;
  int n_classes_ = 0;
  bool standardized_ = false;
};

/// Reads a JSONL dataset (one sample per line). A sidecar header
/// `<path>.header.json` is used for the class count when present.
Dataset load_dataset(const std::filesystem::path& path, bool require_true_labels = false);

/// Writes the JSONL file plus the sidecar header.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

std::filesystem::path header_path(const std::filesystem::path& dataset_path);

/// Per-coordinate z-scoring with biased (1/N) statistics over the whole
/// dataset. Zero-variance coordinates map to 0.
Dataset standardize(const Dataset& ds);

struct SyntheticSpec {
  std::size_t n = 1000;
  std::size_t d = 8;
  int n_classes = 3;
  std::size_t n_patterns = 4;
  std::size_t pattern_size = 25;
  std::size_t noise_misclassified = 50;
  double cluster_spread = 0.08;
  double cluster_separation = 3.0;
  std::uint64_t seed = 0;
};

/// Generated dataset plus construction bookkeeping.
struct SyntheticDataset {
  Dataset dataset;
  /// Planted cluster index (0-based) per sample, -1 elsewhere.
  std::vector<int> planted_cluster;
  /// true for isolated misclassified noise samples.
  std::vector<bool> noise;

  /// |union of planted clusters| / |isolated misclassified|.
  double snr() const;
};

/// Class means sit on a scaled simplex; each class is a unit-variance
/// Gaussian. Planted clusters are tight blobs (std `cluster_spread`) at
/// distance `cluster_separation` from their class mean, all misclassified.
/// Noise misclassifications are flipped background samples kept away from
/// cluster centers and from each other. Sample order is shuffled.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace failure_scout
