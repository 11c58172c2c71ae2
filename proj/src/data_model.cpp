#include "failure_scout/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <limits>

#include <json.hpp>

#include "failure_scout/errors.hpp"

namespace failure_scout {

namespace {

using ojson = nlohmann::ordered_json;

// Distance between neighbouring class means, in units of the background std.
constexpr double kClassSeparation = 6.0;
// Minimum spacing between two noise samples, in units of the background std.
constexpr double kNoiseGap = 1.0;
constexpr int kMaxCenterAttempts = 10000;

int infer_class_count(const std::vector<int>& pseudo, const std::vector<std::optional<int>>& truth) {
  int c = 0;
  for (int y : pseudo) c = std::max(c, y + 1);
  for (const auto& y : truth)
    if (y) c = std::max(c, *y + 1);
  return c;
}

}  // namespace

Dataset::Dataset(std::vector<Sample> samples, int n_classes, bool standardized) : standardized_(standardized) {
  const std::size_t n = samples.size();
  const Eigen::Index d = n == 0 ? 0 : samples.front().embedding.size();
  embeddings_.resize(static_cast<Eigen::Index>(n), d);
  pseudolabels_.reserve(n);
  true_labels_.reserve(n);
  display_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample& s = samples[i];
    if (s.id != i)
      throw DataError("sample ids must be 0..n-1 in order; found id " + std::to_string(s.id) + " at position " +
                      std::to_string(i));
    if (s.embedding.size() != d)
      throw DimensionError("sample " + std::to_string(i) + " has dimension " + std::to_string(s.embedding.size()) +
                           ", expected " + std::to_string(d));
    embeddings_.row(static_cast<Eigen::Index>(i)) = s.embedding.transpose();
    pseudolabels_.push_back(s.pseudolabel);
    true_labels_.push_back(s.true_label);
    display_.push_back(std::move(s.display));
  }
  n_classes_ = n_classes > 0 ? n_classes : infer_class_count(pseudolabels_, true_labels_);
  validate();
}

Dataset::Dataset(Eigen::MatrixXd embeddings, std::vector<int> pseudolabels,
                 std::vector<std::optional<int>> true_labels, std::vector<std::optional<Display>> display,
                 int n_classes, bool standardized)
    : embeddings_(std::move(embeddings)),
      pseudolabels_(std::move(pseudolabels)),
      true_labels_(std::move(true_labels)),
      display_(std::move(display)),
      standardized_(standardized) {
  const std::size_t n = n_rows();
  if (true_labels_.empty()) true_labels_.resize(n);
  if (display_.empty()) display_.resize(n);
  n_classes_ = n_classes > 0 ? n_classes : infer_class_count(pseudolabels_, true_labels_);
  validate();
}

std::size_t Dataset::n_rows() const noexcept { return static_cast<std::size_t>(embeddings_.rows()); }

void Dataset::validate() const {
  const std::size_t n = n_rows();
  if (pseudolabels_.size() != n || true_labels_.size() != n || display_.size() != n)
    throw DimensionError("per-sample field lengths disagree with the embedding row count");
  for (std::size_t i = 0; i < n; ++i) {
    if (pseudolabels_[i] < 0 || pseudolabels_[i] >= n_classes_)
      throw DataError("sample " + std::to_string(i) + ": pseudolabel " + std::to_string(pseudolabels_[i]) +
                      " outside 0.." + std::to_string(n_classes_ - 1));
    if (true_labels_[i] && (*true_labels_[i] < 0 || *true_labels_[i] >= n_classes_))
      throw DataError("sample " + std::to_string(i) + ": true_label " + std::to_string(*true_labels_[i]) +
                      " outside 0.." + std::to_string(n_classes_ - 1));
  }
}

Sample Dataset::sample(SampleId id) const {
  if (id >= n()) throw ParameterError("sample id " + std::to_string(id) + " out of range");
  return Sample{id, embeddings_.row(static_cast<Eigen::Index>(id)).transpose(), pseudolabels_[id], true_labels_[id],
                display_[id]};
}

bool Dataset::has_all_true_labels() const noexcept {
  return std::all_of(true_labels_.begin(), true_labels_.end(), [](const auto& y) { return y.has_value(); });
}

std::vector<bool> Dataset::misclassified_mask() const {
  std::vector<bool> mask(n());
  for (std::size_t i = 0; i < n(); ++i) {
    if (!true_labels_[i]) throw MissingLabelError("sample " + std::to_string(i) + " has no true_label");
    mask[i] = *true_labels_[i] != pseudolabels_[i];
  }
  return mask;
}

Dataset Dataset::with_embeddings(Eigen::MatrixXd embeddings, bool standardized) const {
  if (static_cast<std::size_t>(embeddings.rows()) != n())
    throw DimensionError("replacement embeddings have the wrong row count");
  return Dataset(std::move(embeddings), pseudolabels_, true_labels_, display_, n_classes_, standardized);
}

bool Dataset::operator==(const Dataset& other) const {
  return embeddings_.rows() == other.embeddings_.rows() && embeddings_.cols() == other.embeddings_.cols() &&
         embeddings_ == other.embeddings_ && pseudolabels_ == other.pseudolabels_ &&
         true_labels_ == other.true_labels_ && display_ == other.display_ && n_classes_ == other.n_classes_ &&
         standardized_ == other.standardized_;
}

std::filesystem::path header_path(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p += ".header.json";
  return p;
}

namespace {

Display parse_display(const ojson& j, std::size_t line) {
  if (!j.is_object()) throw ParseError(line, "display must be an object or null");
  Display d;
  auto number = [&](const char* key) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) throw ParseError(line, std::string("display.") + key + " must be a number");
    return it->get<double>();
  };
  d.x2d = number("x2d");
  d.y2d = number("y2d");
  if (auto it = j.find("image_url"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError(line, "display.image_url must be a string");
    d.image_url = it->get<std::string>();
  }
  return d;
}

int parse_label(const ojson& j, const char* key, std::size_t line) {
  if (!j.is_number_integer()) throw ParseError(line, std::string(key) + " must be an integer");
  const auto v = j.get<std::int64_t>();
  if (v < 0) throw ParseError(line, std::string(key) + " must be non-negative");
  return static_cast<int>(v);
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, bool require_true_labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file " + path.string());

  std::optional<ojson> header;
  if (const auto hp = header_path(path); std::filesystem::exists(hp)) {
    std::ifstream hin(hp);
    try {
      header = ojson::parse(hin);
    } catch (const ojson::parse_error& e) {
      throw ParseError(1, hp.string() + ": " + e.what());
    }
  }

  std::vector<Sample> samples;
  std::string text;
  std::size_t line = 0;
  std::optional<Eigen::Index> dim;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    ojson j;
    try {
      j = ojson::parse(text);
    } catch (const ojson::parse_error& e) {
      throw ParseError(line, e.what());
    }
    if (!j.is_object()) throw ParseError(line, "expected a JSON object");

    Sample s;
    s.id = samples.size();
    if (auto it = j.find("id"); it != j.end() && !it->is_null()) {
      if (!it->is_number_integer() || it->get<std::int64_t>() != static_cast<std::int64_t>(s.id))
        throw ParseError(line, "id must equal the 0-based sample position " + std::to_string(s.id));
    }
    auto emb = j.find("embedding");
    if (emb == j.end() || !emb->is_array()) throw ParseError(line, "embedding must be an array");
    s.embedding.resize(static_cast<Eigen::Index>(emb->size()));
    for (std::size_t k = 0; k < emb->size(); ++k) {
      if (!(*emb)[k].is_number()) throw ParseError(line, "embedding entries must be numbers");
      s.embedding(static_cast<Eigen::Index>(k)) = (*emb)[k].get<double>();
    }
    if (!dim) dim = s.embedding.size();
    if (s.embedding.size() != *dim)
      throw DimensionError("line " + std::to_string(line) + ": embedding dimension " +
                           std::to_string(s.embedding.size()) + " differs from " + std::to_string(*dim));

    auto pl = j.find("pseudolabel");
    if (pl == j.end()) throw ParseError(line, "missing pseudolabel");
    s.pseudolabel = parse_label(*pl, "pseudolabel", line);
    if (auto tl = j.find("true_label"); tl != j.end() && !tl->is_null())
      s.true_label = parse_label(*tl, "true_label", line);
    if (require_true_labels && !s.true_label)
      throw MissingLabelError("line " + std::to_string(line) + ": sample " + std::to_string(s.id) +
                              " lacks a true_label");
    if (auto dp = j.find("display"); dp != j.end() && !dp->is_null()) s.display = parse_display(*dp, line);
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw ParseError(line, "dataset contains no samples");

  int c = 0;
  bool standardized = false;
  if (header) {
    const auto n = header->value("n", static_cast<std::int64_t>(samples.size()));
    const auto d = header->value("d", static_cast<std::int64_t>(*dim));
    if (n != static_cast<std::int64_t>(samples.size()) || d != *dim)
      throw DimensionError("header n/d (" + std::to_string(n) + ", " + std::to_string(d) +
                           ") disagree with the file contents");
    c = header->value("c", 0);
    standardized = header->value("standardized", false);
  }
  return Dataset(std::move(samples), c, standardized);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file " + path.string());
  for (SampleId i = 0; i < ds.n(); ++i) {
    ojson j;
    j["id"] = i;
    auto emb = ojson::array();
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(ds.d()); ++k)
      emb.push_back(ds.embeddings()(static_cast<Eigen::Index>(i), k));
    j["embedding"] = std::move(emb);
    j["pseudolabel"] = ds.pseudolabels()[i];
    j["true_label"] = ds.true_label(i) ? ojson(*ds.true_label(i)) : ojson(nullptr);
    if (const auto& disp = ds.display(i)) {
      ojson dj = ojson::object();
      if (disp->x2d) dj["x2d"] = *disp->x2d;
      if (disp->y2d) dj["y2d"] = *disp->y2d;
      if (disp->image_url) dj["image_url"] = *disp->image_url;
      j["display"] = std::move(dj);
    } else {
      j["display"] = nullptr;
    }
    out << j.dump() << '\n';
  }
  std::ofstream hout(header_path(path));
  if (!hout) throw IoError("cannot write header file " + header_path(path).string());
  ojson h;
  h["n"] = ds.n();
  h["d"] = ds.d();
  h["c"] = ds.c();
  h["standardized"] = ds.standardized();
  hout << h.dump() << '\n';
}

Dataset standardize(const Dataset& ds) {
  if (ds.n() < 2) throw InsufficientDataError("standardization needs at least 2 samples");
  const auto& x = ds.embeddings();
  const double n = static_cast<double>(ds.n());
  const Eigen::RowVectorXd mean = x.colwise().sum() / n;
  Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / n;
  for (Eigen::Index k = 0; k < centered.cols(); ++k) {
    // Relative threshold: a column that is constant up to round-off counts as constant.
    const double scale = std::max(1.0, std::abs(mean(k)));
    if (var(k) <= 1e-24 * scale * scale)
      centered.col(k).setZero();
    else
      centered.col(k) /= std::sqrt(var(k));
  }
  return ds.with_embeddings(std::move(centered), true);
}

double SyntheticDataset::snr() const {
  const auto signal = std::count_if(planted_cluster.begin(), planted_cluster.end(), [](int p) { return p >= 0; });
  const auto noisy = std::count(noise.begin(), noise.end(), true);
  return noisy == 0 ? std::numeric_limits<double>::infinity() : static_cast<double>(signal) / static_cast<double>(noisy);
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_classes < 2) throw SpecError("synthetic data needs at least 2 classes");
  if (static_cast<std::size_t>(spec.n_classes) > spec.d)
    throw SpecError("class count must not exceed the dimension (simplex placement)");
  if (spec.n_patterns * spec.pattern_size + spec.noise_misclassified > spec.n)
    throw SpecError("n_patterns * pattern_size + noise_misclassified exceeds n");
  if (spec.n_patterns > 0 && spec.pattern_size == 0) throw SpecError("pattern_size must be positive");
  if (!(spec.cluster_spread > 0.0) || !(spec.cluster_separation > 0.0))
    throw SpecError("cluster_spread and cluster_separation must be positive");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(spec.d);
  const int c = spec.n_classes;

  auto gaussian = [&](Eigen::Index dim) {
    Eigen::VectorXd v(dim);
    for (Eigen::Index k = 0; k < dim; ++k) v(k) = normal(rng);
    return v;
  };

  std::vector<Eigen::VectorXd> class_mean(static_cast<std::size_t>(c), Eigen::VectorXd::Zero(d));
  for (int y = 0; y < c; ++y) class_mean[static_cast<std::size_t>(y)](y) = kClassSeparation / std::sqrt(2.0);

  std::vector<Eigen::VectorXd> centers;
  std::vector<int> center_class;
  for (std::size_t f = 0; f < spec.n_patterns; ++f) {
    const int y = static_cast<int>(f % static_cast<std::size_t>(c));
    bool placed = false;
    for (int attempt = 0; attempt < kMaxCenterAttempts && !placed; ++attempt) {
      Eigen::VectorXd u = gaussian(d);
      u.normalize();
      Eigen::VectorXd center = class_mean[static_cast<std::size_t>(y)] + spec.cluster_separation * u;
      placed = std::all_of(centers.begin(), centers.end(),
                           [&](const Eigen::VectorXd& o) { return (o - center).norm() >= spec.cluster_separation; });
      if (placed) {
        centers.push_back(std::move(center));
        center_class.push_back(y);
      }
    }
    if (!placed) throw SpecError("could not place planted cluster centers with the requested separation");
  }

  const std::size_t n = spec.n;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), d);
  std::vector<int> pseudo(n);
  std::vector<std::optional<int>> truth(n);
  std::vector<int> planted(n, -1);
  std::vector<bool> noise(n, false);

  std::size_t row = 0;
  for (std::size_t f = 0; f < spec.n_patterns; ++f) {
    for (std::size_t k = 0; k < spec.pattern_size; ++k, ++row) {
      x.row(static_cast<Eigen::Index>(row)) = (centers[f] + spec.cluster_spread * gaussian(d)).transpose();
      pseudo[row] = center_class[f];
      truth[row] = (center_class[f] + 1) % c;
      planted[row] = static_cast<int>(f);
    }
  }
  const std::size_t first_background = row;
  for (std::size_t k = 0; row < n; ++k, ++row) {
    const int y = static_cast<int>(k % static_cast<std::size_t>(c));
    x.row(static_cast<Eigen::Index>(row)) = (class_mean[static_cast<std::size_t>(y)] + gaussian(d)).transpose();
    pseudo[row] = y;
    truth[row] = y;
  }

  // Flip isolated background samples into misclassified noise.
  std::vector<std::size_t> candidates(n - first_background);
  std::iota(candidates.begin(), candidates.end(), first_background);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const double keep_away = std::max(spec.cluster_separation / 2.0, 10.0 * spec.cluster_spread);
  std::vector<std::size_t> chosen_noise;
  for (std::size_t idx : candidates) {
    if (chosen_noise.size() == spec.noise_misclassified) break;
    const Eigen::VectorXd p = x.row(static_cast<Eigen::Index>(idx)).transpose();
    const bool far_from_centers = std::all_of(centers.begin(), centers.end(),
                                              [&](const Eigen::VectorXd& ctr) { return (p - ctr).norm() >= keep_away; });
    const bool far_from_noise = std::all_of(chosen_noise.begin(), chosen_noise.end(), [&](std::size_t o) {
      return (x.row(static_cast<Eigen::Index>(o)).transpose() - p).norm() >= kNoiseGap;
    });
    if (far_from_centers && far_from_noise) chosen_noise.push_back(idx);
  }
  if (chosen_noise.size() < spec.noise_misclassified)
    throw SpecError("could not place " + std::to_string(spec.noise_misclassified) +
                    " isolated noise samples; reduce noise_misclassified");
  for (std::size_t idx : chosen_noise) {
    truth[idx] = (pseudo[idx] + 1) % c;
    noise[idx] = true;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  SyntheticDataset out;
  Eigen::MatrixXd xs(static_cast<Eigen::Index>(n), d);
  std::vector<int> ps(n);
  std::vector<std::optional<int>> ts(n);
  std::vector<std::optional<Display>> disp(n);
  out.planted_cluster.resize(n);
  out.noise.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = order[i];
    xs.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(src));
    ps[i] = pseudo[src];
    ts[i] = truth[src];
    if (d >= 2) disp[i] = Display{x(static_cast<Eigen::Index>(src), 0), x(static_cast<Eigen::Index>(src), 1), {}};
    out.planted_cluster[i] = planted[src];
    out.noise[i] = noise[src];
  }
  out.dataset = Dataset(std::move(xs), std::move(ps), std::move(ts), std::move(disp), c, false);
  return out;
}

}  // namespace failure_scout
