#include "failure_scout/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include "failure_scout/errors.hpp"

namespace failure_scout {

namespace {

std::string shortest(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : std::to_string(v);
}

SummaryStat summarize(const std::vector<double>& xs) {
  SummaryStat s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

using RowKey = std::tuple<std::string, int, double>;

std::vector<BenchmarkRow> aggregate(const std::vector<BenchmarkCell>& cells, std::size_t n_cutoffs,
                                    const std::function<std::string(const BenchmarkCell&)>& scope_of) {
  std::map<RowKey, std::vector<const BenchmarkCell*>> groups;
  std::vector<RowKey> order;
  for (const auto& cell : cells) {
    RowKey key{scope_of(cell), static_cast<int>(cell.strategy), cell.theta};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&cell);
  }
  std::vector<BenchmarkRow> rows;
  for (const auto& key : order) {
    const auto& members = groups[key];
    BenchmarkRow row;
    row.scope = std::get<0>(key);
    row.strategy = static_cast<Strategy>(std::get<1>(key));
    row.theta = std::get<2>(key);
    row.runs = members.size();
    std::vector<double> sens;
    std::vector<std::vector<double>> eff(n_cutoffs);
    for (const auto* cell : members) {
      if (!cell->metrics) {
        ++row.failures;
        continue;
      }
      sens.push_back(cell->metrics->sensitivity);
      for (std::size_t k = 0; k < n_cutoffs; ++k) eff[k].push_back(cell->metrics->effectiveness[k]);
    }
    row.sensitivity = summarize(sens);
    for (const auto& e : eff) row.effectiveness.push_back(summarize(e));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

const BenchmarkRow* BenchmarkReport::find(const std::vector<BenchmarkRow>& rows, const std::string& scope, Strategy s,
                                          double theta) const {
  for (const auto& row : rows)
    if (row.scope == scope && row.strategy == s && row.theta == theta) return &row;
  return nullptr;
}

BenchmarkReport run_benchmark(std::span<BenchmarkDataset> datasets, std::span<const SessionConfig> configs,
                              std::span<const std::uint64_t> seeds, std::span<const double> cutoffs,
                              unsigned threads) {
  if (seeds.empty()) throw ParameterError("benchmark needs at least one seed");
  for (auto& ds : datasets) {
    if (ds.truth.pattern_of.size() != ds.data.n())
      throw DimensionError("ground truth of dataset '" + ds.name + "' does not match its size");
    if (!ds.graph) ds.graph = std::make_shared<const MutualKnnGraph>(build_mutual_knn(ds.data, ds.truth.k_nn));
  }

  struct Job {
    const BenchmarkDataset* ds;
    SessionConfig cfg;
  };
  std::vector<Job> jobs;
  for (const auto& ds : datasets) {
    for (const auto& cfg : configs) {
      const std::size_t repeats = cfg.strategy == Strategy::US ? seeds.size() : 1;
      for (std::size_t r = 0; r < repeats; ++r) {
        Job job{&ds, cfg};
        job.cfg.seed = seeds[r];
        jobs.push_back(job);
      }
    }
  }

  BenchmarkReport report;
  report.cutoffs.assign(cutoffs.begin(), cutoffs.end());
  report.cells.resize(jobs.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t idx = next++; idx < jobs.size(); idx = next++) {
      const Job& job = jobs[idx];
      BenchmarkCell& cell = report.cells[idx];
      cell.dataset = job.ds->name;
      cell.group = job.ds->group;
      cell.strategy = job.cfg.strategy;
      cell.theta = job.cfg.theta;
      cell.seed = job.cfg.seed;
      const auto start = std::chrono::steady_clock::now();
      try {
        if (job.ds->graph->k_nn() != job.cfg.k_nn)
          throw ParameterError("config k_nn differs from the ground-truth graph of '" + job.ds->name + "'");
        OracleAnnotator oracle(job.ds->data);
        cell.result = run_session(job.ds->data, job.ds->graph, job.cfg, oracle, job.ds->name);
        if (cell.result->aborted) throw AnnotatorError(cell.result->error);
        cell.metrics = evaluate_metrics(*cell.result, job.ds->truth, cutoffs);
        cell.rounds_csv = round_csv_rows(*cell.result, &job.ds->truth);
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  unsigned n_threads = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(std::max<std::size_t>(1, jobs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  const std::size_t nc = cutoffs.size();
  report.per_dataset = aggregate(report.cells, nc, [](const BenchmarkCell& c) { return c.dataset; });
  report.per_group = aggregate(report.cells, nc, [](const BenchmarkCell& c) { return c.group; });
  report.overall = aggregate(report.cells, nc, [](const BenchmarkCell&) { return std::string("overall"); });
  return report;
}

std::string summary_csv(const BenchmarkReport& report) {
  std::ostringstream out;
  out << "level,scope,strategy,theta,runs,failures,sensitivity_mean,sensitivity_std";
  for (double f : report.cutoffs) out << ",effectiveness@" << shortest(f) << "_mean,effectiveness@" << shortest(f) << "_std";
  out << '\n';
  auto emit = [&](const char* level, const std::vector<BenchmarkRow>& rows) {
    for (const auto& r : rows) {
      out << level << ',' << r.scope << ',' << to_string(r.strategy) << ',' << shortest(r.theta) << ',' << r.runs << ','
          << r.failures << ',' << shortest(r.sensitivity.mean) << ',' << shortest(r.sensitivity.stddev);
      for (const auto& e : r.effectiveness) out << ',' << shortest(e.mean) << ',' << shortest(e.stddev);
      out << '\n';
    }
  };
  emit("dataset", report.per_dataset);
  emit("group", report.per_group);
  emit("overall", report.overall);
  return out.str();
}

nlohmann::ordered_json to_json(const BenchmarkReport& report) {
  using ojson = nlohmann::ordered_json;
  auto rows_json = [&](const std::vector<BenchmarkRow>& rows) {
    ojson arr = ojson::array();
    for (const auto& r : rows) {
      ojson j;
      j["scope"] = r.scope;
      j["strategy"] = to_string(r.strategy);
      j["theta"] = r.theta;
      j["runs"] = r.runs;
      j["failures"] = r.failures;
      j["sensitivity"] = {{"mean", r.sensitivity.mean}, {"std", r.sensitivity.stddev}};
      ojson eff = ojson::object();
      for (std::size_t k = 0; k < r.effectiveness.size(); ++k)
        eff[shortest(report.cutoffs[k])] = {{"mean", r.effectiveness[k].mean}, {"std", r.effectiveness[k].stddev}};
      j["effectiveness"] = std::move(eff);
      arr.push_back(std::move(j));
    }
    return arr;
  };
  ojson j;
  j["cutoffs"] = report.cutoffs;
  j["per_dataset"] = rows_json(report.per_dataset);
  j["per_group"] = rows_json(report.per_group);
  j["overall"] = rows_json(report.overall);
  ojson cells = ojson::array();
  for (const auto& c : report.cells) {
    ojson jc;
    jc["dataset"] = c.dataset;
    jc["group"] = c.group;
    jc["strategy"] = to_string(c.strategy);
    jc["theta"] = c.theta;
    jc["seed"] = c.seed;
    if (c.metrics) {
      jc["sensitivity"] = c.metrics->sensitivity;
      jc["effectiveness"] = c.metrics->effectiveness;
      jc["patterns_detected"] = c.metrics->patterns_detected;
      jc["p"] = c.metrics->p;
    }
    if (c.result) {
      jc["bandwidths"] = {{"h_x", c.result->bandwidths.h_x}, {"h_y", c.result->bandwidths.h_y}};
      jc["queried"] = c.result->queried();
    }
    if (!c.error.empty()) jc["error"] = c.error;
    jc["seconds"] = c.seconds;
    cells.push_back(std::move(jc));
  }
  j["cells"] = std::move(cells);
  return j;
}

void write_benchmark(const BenchmarkReport& report, const std::filesystem::path& prefix) {
  auto with_suffix = [&](const std::string& suffix) {
    auto p = prefix;
    p += suffix;
    return p;
  };
  std::ofstream rounds(with_suffix("_rounds.csv"));
  std::ofstream summary(with_suffix("_summary.csv"));
  std::ofstream json(with_suffix(".json"));
  if (!rounds || !summary || !json) throw IoError("cannot write benchmark outputs with prefix " + prefix.string());
  rounds << kRoundCsvHeader << '\n';
  for (const auto& c : report.cells) rounds << c.rounds_csv;
  summary << summary_csv(report);
  json << to_json(report).dump(2) << '\n';
}

std::vector<BenchmarkDataset> synthetic_suite(const SuiteOptions& options) {
  std::vector<BenchmarkDataset> out;
  const std::size_t signal = options.base.n_patterns * options.base.pattern_size;
  for (std::size_t g = 0; g < options.snr_groups.size(); ++g) {
    const auto& [group, snr] = options.snr_groups[g];
    if (!(snr > 0.0)) throw SpecError("SNR levels must be positive");
    for (std::uint64_t seed : options.seeds) {
      SyntheticSpec spec = options.base;
      spec.noise_misclassified = static_cast<std::size_t>(std::llround(static_cast<double>(signal) / snr));
      // Distinct geometry per group; otherwise groups share planted clusters.
      spec.seed = seed + 1000003ULL * (g + 1);
      const SyntheticDataset synth = generate_synthetic(spec);
      BenchmarkDataset ds;
      ds.name = group + "_seed" + std::to_string(seed);
      ds.group = group;
      ds.data = standardize(synth.dataset);
      ds.graph = std::make_shared<const MutualKnnGraph>(build_mutual_knn(ds.data, options.k_nn));
      ds.truth = ground_truth_patterns(*ds.graph, ds.data.misclassified_mask(), options.m_threshold);
      out.push_back(std::move(ds));
    }
  }
  return out;
}

}  // namespace failure_scout
