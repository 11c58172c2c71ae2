#include "failure_scout/engine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "failure_scout/errors.hpp"

namespace failure_scout {

std::string to_string(Strategy s) { return s == Strategy::DS ? "DS" : "US"; }

Strategy parse_strategy(const std::string& name) {
  if (name == "DS" || name == "ds") return Strategy::DS;
  if (name == "US" || name == "us") return Strategy::US;
  throw ParameterError("unknown strategy '" + name + "' (expected DS or US)");
}

void SessionConfig::validate() const {
  if (batch_size < 1) throw ParameterError("batch size must be at least 1");
  if (!(budget > 0.0 && budget <= 1.0)) throw ParameterError("budget must lie in (0, 1]");
  if (max_rounds && *max_rounds < 1) throw ParameterError("max_rounds must be at least 1");
  if (!(theta >= 0.0 && theta <= 1.0)) throw ParameterError("theta must lie in [0, 1]");
  if (m_threshold < 1) throw ParameterError("evidence threshold M must be at least 1");
  if (!(bounds.lower < 0.0 && bounds.upper > 0.0)) throw ParameterError("bounds must satisfy L < 0 < U");
  if (!(jitter >= 0.0)) throw ParameterError("jitter must be non-negative");
  if (!(delta > 0.0)) throw ParameterError("delta must be positive");
}

std::size_t SessionConfig::query_cap(std::size_t n) const {
  auto cap = static_cast<std::size_t>(std::floor(budget * static_cast<double>(n) + 1e-9));
  if (max_rounds) cap = std::min(cap, *max_rounds * batch_size);
  return std::min(cap, n);
}

namespace {

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : std::to_string(v);
}

}  // namespace

nlohmann::ordered_json to_json(const SessionConfig& cfg) {
  nlohmann::ordered_json j;
  j["strategy"] = to_string(cfg.strategy);
  j["theta"] = cfg.theta;
  j["batch_size"] = cfg.batch_size;
  j["budget"] = cfg.budget;
  j["max_rounds"] = cfg.max_rounds ? nlohmann::ordered_json(*cfg.max_rounds) : nlohmann::ordered_json(nullptr);
  j["m"] = cfg.m_threshold;
  j["k_nn"] = cfg.k_nn;
  j["delta"] = cfg.delta;
  j["lower"] = cfg.bounds.lower;
  j["upper"] = cfg.bounds.upper;
  j["jitter"] = cfg.jitter;
  j["seed"] = cfg.seed;
  return j;
}

std::vector<int> OracleAnnotator::annotate(std::span<const SampleId> ids) {
  std::vector<int> labels;
  labels.reserve(ids.size());
  for (SampleId id : ids) {
    if (id >= ds_.n()) throw AnnotatorError("sample id " + std::to_string(id) + " out of range");
    const auto& y = ds_.true_label(id);
    if (!y) throw AnnotatorError("no true label available for sample " + std::to_string(id));
    labels.push_back(*y);
  }
  return labels;
}

namespace {

std::shared_ptr<const Eigen::MatrixXd> product_gram(const Dataset& ds, const Bandwidths& bw, const ClassMoments& m,
                                                    const SessionConfig& cfg) {
  KernelConfig kc{bw.h_x, bw.h_y, cfg.delta, cfg.jitter};
  return std::make_shared<const Eigen::MatrixXd>(gram_matrix(ds, m, kc).k);
}

Bandwidths checked_bandwidths(const Dataset& ds, const ClassMoments& m, const SessionConfig& cfg) {
  cfg.validate();
  if (!ds.standardized()) throw ParameterError("sessions require a standardized dataset");
  return select_bandwidths(ds, m, cfg.delta);
}

}  // namespace

Session::Session(const Dataset& ds, std::shared_ptr<const MutualKnnGraph> graph, SessionConfig cfg)
    : Session(ds, std::move(graph), std::move(cfg), class_moments(ds)) {}

Session::Session(const Dataset& ds, SessionConfig cfg)
    : Session(ds, std::make_shared<const MutualKnnGraph>(build_mutual_knn(ds, cfg.k_nn)), cfg) {}

Session::Session(const Dataset& ds, std::shared_ptr<const MutualKnnGraph> graph, SessionConfig cfg,
                 const ClassMoments& moments)
    : cfg_(std::move(cfg)),
      graph_(std::move(graph)),
      pseudolabels_(ds.pseudolabels().begin(), ds.pseudolabels().end()),
      n_classes_(ds.c()),
      bandwidths_(checked_bandwidths(ds, moments, cfg_)),
      similarity_(std::make_shared<const Eigen::MatrixXd>(feature_gram(ds.embeddings(), bandwidths_.h_x))),
      gp_(product_gram(ds, bandwidths_, moments, cfg_), cfg_.jitter, cfg_.bounds),
      detection_(ds.n()),
      rng_(cfg_.seed) {
  if (!graph_ || graph_->n() != ds.n()) throw DimensionError("graph does not match the dataset");
  remaining_.resize(ds.n());
  for (SampleId i = 0; i < ds.n(); ++i) remaining_[i] = i;
}

bool Session::finished() const noexcept {
  return pending_.empty() && queried_count() >= cfg_.query_cap(n());
}

std::vector<SampleId> Session::directed_batch(std::size_t size) const {
  const VoiScores voi = voi_scores(posterior(gp_));
  const DppKernel kernel = cfg_.theta > 0.0
                               ? mixture_kernel(conditional_similarity(*similarity_, gp_.queried()), voi, cfg_.theta)
                               : exploitation_kernel(voi);
  return map_select(kernel, size).chosen;
}

std::vector<SampleId> Session::uniform_batch(std::size_t size) {
  // Partial Fisher-Yates over the pool; draws are prefix-consistent per seed.
  for (std::size_t k = 0; k < size; ++k) {
    const std::uint64_t span = remaining_.size() - k;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t draw = rng_();
    while (draw >= limit) draw = rng_();
    std::swap(remaining_[k], remaining_[k + static_cast<std::size_t>(draw % span)]);
  }
  std::vector<SampleId> batch(remaining_.begin(), remaining_.begin() + static_cast<std::ptrdiff_t>(size));
  remaining_.erase(remaining_.begin(), remaining_.begin() + static_cast<std::ptrdiff_t>(size));
  std::sort(batch.begin(), batch.end());
  return batch;
}

const std::vector<SampleId>& Session::propose() {
  if (!pending_.empty() || finished()) return pending_;
  const std::size_t cap = cfg_.query_cap(n());
  const std::size_t size = std::min(cfg_.batch_size, cap - queried_count());
  const int round = rounds_completed() + 1;
  try {
    pending_ = cfg_.strategy == Strategy::US ? uniform_batch(size) : directed_batch(size);
  } catch (const NumericalError& e) {
    if (e.round()) throw;
    throw NumericalError(e.what(), round);
  }
  return pending_;
}

const RoundLog& Session::submit(std::span<const int> true_labels) {
  if (pending_.empty()) throw ConsistencyError("no batch is pending");
  if (true_labels.size() != pending_.size())
    throw ParameterError("expected " + std::to_string(pending_.size()) + " labels, got " +
                         std::to_string(true_labels.size()));
  for (int y : true_labels)
    if (y < 0 || y >= n_classes_) throw ParameterError("label " + std::to_string(y) + " outside the class range");

  RoundLog log;
  log.round = rounds_completed() + 1;
  log.chosen = pending_;
  for (std::size_t k = 0; k < pending_.size(); ++k) {
    const SampleId id = pending_[k];
    const bool wrong = true_labels[k] != pseudolabels_[id];
    gp_.record_feedback(id, wrong);
    log.misclassified.push_back(wrong);
    if (wrong) queried_misclassified_.push_back(id);
  }
  log.new_patterns = detect_new_patterns(*graph_, detection_, queried_misclassified_, cfg_.m_threshold, log.round);
  for (const auto& members : log.new_patterns) gp_.recalibrate_pattern(members);
  log.queried_cum = queried_count();
  pending_.clear();
  rounds_.push_back(std::move(log));
  return rounds_.back();
}

SessionResult Session::result(std::string dataset_name) const {
  SessionResult r;
  r.dataset = std::move(dataset_name);
  r.config = cfg_;
  r.n = n();
  r.bandwidths = bandwidths_;
  r.rounds = rounds_;
  r.confirmed = detection_.confirmed;
  return r;
}

SessionResult run_session(const Dataset& ds, std::shared_ptr<const MutualKnnGraph> graph, const SessionConfig& cfg,
                          Annotator& annotator, std::string dataset_name) {
  Session session(ds, std::move(graph), cfg);
  while (!session.finished()) {
    const auto& batch = session.propose();
    if (batch.empty()) break;
    std::vector<int> labels;
    try {
      labels = annotator.annotate(batch);
      if (labels.size() != batch.size()) throw AnnotatorError("annotator returned the wrong number of labels");
    } catch (const std::exception& e) {
      SessionResult partial = session.result(std::move(dataset_name));
      partial.aborted = true;
      partial.error = e.what();
      return partial;
    }
    session.submit(labels);
  }
  return session.result(std::move(dataset_name));
}

SessionResult run_session(const Dataset& ds, const PatternAssignment& truth, const SessionConfig& cfg,
                          Annotator& annotator, std::string dataset_name) {
  if (truth.pattern_of.size() != ds.n()) throw DimensionError("ground truth does not match the dataset size");
  auto graph = std::make_shared<const MutualKnnGraph>(build_mutual_knn(ds, cfg.k_nn));
  return run_session(ds, std::move(graph), cfg, annotator, std::move(dataset_name));
}

Metrics evaluate_metrics(const SessionResult& result, const PatternAssignment& truth, std::span<const double> cutoffs) {
  if (truth.p <= 0) throw UndefinedMetricsError("ground truth has no failure patterns");
  if (truth.pattern_of.size() != result.n) throw DimensionError("ground truth does not match the session size");
  Metrics m;
  m.p = truth.p;
  m.detected_at.assign(static_cast<std::size_t>(truth.p), std::nullopt);
  for (const auto& round : result.rounds) {
    for (const auto& members : round.new_patterns) {
      const int matched = match_pattern(truth, members);
      if (matched <= 0) continue;
      auto& slot = m.detected_at[static_cast<std::size_t>(matched - 1)];
      if (slot) continue;
      slot = round.queried_cum;
      ++m.patterns_detected;
      if (!m.first_pattern_queried_at) m.first_pattern_queried_at = round.queried_cum;
    }
  }
  const double n = static_cast<double>(result.n);
  m.sensitivity = m.first_pattern_queried_at ? static_cast<double>(*m.first_pattern_queried_at) / n : 1.0;
  for (double f : cutoffs) {
    const double limit = f * n + 1e-9;
    const auto hits = std::count_if(m.detected_at.begin(), m.detected_at.end(),
                                    [&](const auto& at) { return at && static_cast<double>(*at) <= limit; });
    m.cutoffs.push_back(f);
    m.effectiveness.push_back(static_cast<double>(hits) / static_cast<double>(truth.p));
  }
  return m;
}

std::string round_csv_rows(const SessionResult& result, const PatternAssignment* truth) {
  std::optional<std::size_t> first;
  std::ostringstream out;
  std::size_t confirmed = 0;
  for (const auto& round : result.rounds) {
    confirmed += round.new_patterns.size();
    if (truth && !first) {
      for (const auto& members : round.new_patterns)
        if (match_pattern(*truth, members) > 0) first = round.queried_cum;
    }
    const auto wrong = std::count(round.misclassified.begin(), round.misclassified.end(), true);
    out << result.dataset << ',' << to_string(result.config.strategy) << ',' << format_double(result.config.theta)
        << ',' << result.config.seed << ',' << round.round << ',' << round.queried_cum << ',' << wrong << ','
        << confirmed << ',';
    if (first) out << *first;
    out << '\n';
  }
  return out.str();
}

nlohmann::ordered_json session_summary(const SessionResult& result, const PatternAssignment* truth,
                                       std::span<const double> cutoffs) {
  using ojson = nlohmann::ordered_json;
  ojson j;
  j["dataset"] = result.dataset;
  j["n"] = result.n;
  j["config"] = to_json(result.config);
  j["bandwidths"] = {{"h_x", result.bandwidths.h_x},
                     {"h_y", result.bandwidths.h_y},
                     {"d_x", result.bandwidths.d_x},
                     {"d_y", result.bandwidths.d_y}};
  j["rounds_executed"] = result.rounds.size();
  j["queried"] = result.queried();
  j["aborted"] = result.aborted;
  if (result.aborted) j["error"] = result.error;
  ojson rounds = ojson::array();
  for (const auto& r : result.rounds) {
    ojson jr;
    jr["round"] = r.round;
    jr["chosen"] = r.chosen;
    jr["misclassified"] = r.misclassified;
    jr["new_patterns"] = r.new_patterns;
    jr["queried_cum"] = r.queried_cum;
    rounds.push_back(std::move(jr));
  }
  j["rounds"] = std::move(rounds);
  if (truth && truth->p > 0) {
    const Metrics m = evaluate_metrics(result, *truth, cutoffs);
    ojson jm;
    jm["sensitivity"] = m.sensitivity;
    jm["first_pattern_queried_at"] =
        m.first_pattern_queried_at ? ojson(*m.first_pattern_queried_at) : ojson(nullptr);
    ojson eff = ojson::object();
    for (std::size_t k = 0; k < m.cutoffs.size(); ++k) eff[format_double(m.cutoffs[k])] = m.effectiveness[k];
    jm["effectiveness"] = std::move(eff);
    jm["patterns_detected"] = m.patterns_detected;
    jm["p"] = m.p;
    j["metrics"] = std::move(jm);
  }
  return j;
}

}  // namespace failure_scout
