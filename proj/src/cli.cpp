#include "failure_scout/cli.hpp"

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "failure_scout/benchmark.hpp"
#include "failure_scout/engine.hpp"
#include "failure_scout/errors.hpp"
#include "failure_scout/pattern_graph.hpp"
#include "failure_scout/service.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that collides with Eigen.
#include <CLI11.hpp>
#include <httplib.h>

namespace failure_scout {

namespace {

Dataset load_scaled(const std::string& path) {
  Dataset ds = load_dataset(path);
  return ds.standardized() ? ds : standardize(ds);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

struct SynthArgs {
  SyntheticSpec spec;
  std::string out;
  bool standardize = false;
};

struct TruthArgs {
  std::string data;
  std::string out;
  std::size_t knn = 7;
  std::size_t m = 10;
};

struct RunArgs {
  std::string data;
  std::string truth;
  std::string out;
  std::string strategy = "DS";
  std::optional<std::size_t> max_rounds;
  SessionConfig cfg;
  std::vector<double> cutoffs = {0.1, 0.2};
};

struct BenchArgs {
  std::vector<std::string> data;
  std::string out = "bench";
  std::vector<double> thetas = {0.0, 0.25, 0.5, 1.0};
  bool include_us = true;
  std::size_t n_seeds = 10;
  std::vector<double> snr = {0.5, 1.0, 2.0};
  SyntheticSpec base;
  SessionConfig cfg;
  std::vector<double> cutoffs = {0.1, 0.2};
  unsigned threads = 0;
};

struct ServeArgs {
  std::string host = "127.0.0.1";
  std::optional<int> port;
  std::string snapshot_dir;
};

void add_session_flags(CLI::App* cmd, SessionConfig& cfg) {
  cmd->add_option("--theta", cfg.theta, "exploration weight in [0, 1]")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--batch-size", cfg.batch_size, "samples per round")->check(CLI::PositiveNumber);
  cmd->add_option("--budget", cfg.budget, "fraction of the dataset to query, in (0, 1]")
      ->check(CLI::Range(0.0, 1.0) & CLI::PositiveNumber);
  cmd->add_option("--m", cfg.m_threshold, "minimum pattern size")->check(CLI::PositiveNumber);
  cmd->add_option("--knn", cfg.k_nn, "neighbors per sample in the mutual k-NN graph");
  cmd->add_option("--seed", cfg.seed, "random seed");
  cmd->add_option("--lower", cfg.bounds.lower, "feedback value for correctly classified samples");
  cmd->add_option("--upper", cfg.bounds.upper, "feedback value for misclassified samples");
}

int do_synth(const SynthArgs& a, std::ostream& out) {
  SyntheticDataset synth = generate_synthetic(a.spec);
  const Dataset ds = a.standardize ? standardize(synth.dataset) : synth.dataset;
  save_dataset(ds, a.out);
  out << "wrote " << ds.n() << " samples to " << a.out << '\n';
  return 0;
}

int do_truth(const TruthArgs& a, std::ostream& out) {
  const Dataset ds = load_scaled(a.data);
  const auto graph = build_mutual_knn(ds, a.knn);
  const PatternAssignment truth = ground_truth_patterns(graph, ds.misclassified_mask(), a.m);
  save_truth(truth, a.out);
  out << "patterns: " << truth.p << '\n';
  for (int p = 1; p <= truth.p; ++p) out << "  pattern " << p << ": " << truth.members(p).size() << " samples\n";
  return 0;
}

int do_run(RunArgs a, std::ostream& out) {
  a.cfg.strategy = parse_strategy(a.strategy);
  a.cfg.max_rounds = a.max_rounds;
  const Dataset ds = load_scaled(a.data);
  std::optional<PatternAssignment> truth;
  if (!a.truth.empty()) {
    truth = load_truth(a.truth);
    if (truth->k_nn != a.cfg.k_nn)
      throw ParameterError("ground truth was built with k_nn=" + std::to_string(truth->k_nn) + " but --knn is " +
                           std::to_string(a.cfg.k_nn));
  } else if (ds.has_all_true_labels()) {
    truth = ground_truth_patterns(build_mutual_knn(ds, a.cfg.k_nn), ds.misclassified_mask(), a.cfg.m_threshold);
  }
  OracleAnnotator oracle(ds);
  const std::string name = std::filesystem::path(a.data).stem().string();
  const SessionResult result = run_session(ds, std::make_shared<const MutualKnnGraph>(build_mutual_knn(ds, a.cfg.k_nn)),
                                           a.cfg, oracle, name);
  const PatternAssignment* t = truth && truth->p > 0 ? &*truth : nullptr;
  const std::string csv = std::string(kRoundCsvHeader) + "\n" + round_csv_rows(result, t);
  const auto summary = session_summary(result, t, a.cutoffs);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out + ".csv", csv);
    write_text(a.out + ".json", summary.dump(2) + "\n");
    out << "wrote " << a.out << ".csv and " << a.out << ".json\n";
  }
  if (result.aborted) throw AnnotatorError(result.error);
  return 0;
}

int do_bench(const BenchArgs& a, std::ostream& out) {
  std::vector<BenchmarkDataset> datasets;
  if (a.data.empty()) {
    SuiteOptions opts;
    opts.base = a.base;
    opts.snr_groups.clear();
    for (double snr : a.snr) {
      std::ostringstream name;
      name << "snr" << snr;
      opts.snr_groups.emplace_back(name.str(), snr);
    }
    opts.seeds.clear();
    for (std::size_t s = 1; s <= a.n_seeds; ++s) opts.seeds.push_back(s);
    opts.k_nn = a.cfg.k_nn;
    opts.m_threshold = a.cfg.m_threshold;
    datasets = synthetic_suite(opts);
  } else {
    for (const auto& path : a.data) {
      BenchmarkDataset bd;
      bd.name = std::filesystem::path(path).stem().string();
      bd.group = "files";
      bd.data = load_scaled(path);
      bd.graph = std::make_shared<const MutualKnnGraph>(build_mutual_knn(bd.data, a.cfg.k_nn));
      bd.truth = ground_truth_patterns(*bd.graph, bd.data.misclassified_mask(), a.cfg.m_threshold);
      datasets.push_back(std::move(bd));
    }
  }
  std::vector<SessionConfig> configs;
  for (double theta : a.thetas) {
    SessionConfig c = a.cfg;
    c.strategy = Strategy::DS;
    c.theta = theta;
    configs.push_back(c);
  }
  if (a.include_us) {
    SessionConfig c = a.cfg;
    c.strategy = Strategy::US;
    c.theta = 0.0;
    configs.push_back(c);
  }
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 1; s <= a.n_seeds; ++s) seeds.push_back(s);
  const BenchmarkReport report = run_benchmark(datasets, configs, seeds, a.cutoffs, a.threads);
  write_benchmark(report, a.out);
  std::size_t failed = 0;
  for (const auto& c : report.cells)
    if (!c.error.empty()) ++failed;
  out << summary_csv(report);
  out << "cells: " << report.cells.size() << ", failed: " << failed << '\n';
  return failed == 0 ? 0 : 1;
}

int do_serve(const ServeArgs& a, std::ostream& out) {
  const int port = resolve_port(a.port);
  std::optional<std::filesystem::path> dir;
  if (!a.snapshot_dir.empty()) dir = a.snapshot_dir;
  SessionService service(dir);
  if (dir) out << "restored " << service.restore_snapshots() << " sessions from " << *dir << '\n';
  httplib::Server server;
  register_routes(server, service);
  out << "listening on http://" << a.host << ':' << port << '\n' << std::flush;
  if (!server.listen(a.host, port)) throw IoError("cannot listen on " + a.host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Failure pattern discovery with directed batch sampling", "failure_scout"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset (JSONL plus header)");
  synth_cmd->add_option("--out", synth.out, "output JSONL path")->required();
  synth_cmd->add_option("--n", synth.spec.n, "number of samples");
  synth_cmd->add_option("--d", synth.spec.d, "embedding dimension");
  synth_cmd->add_option("--classes", synth.spec.n_classes, "number of classes");
  synth_cmd->add_option("--patterns", synth.spec.n_patterns, "planted failure patterns");
  synth_cmd->add_option("--pattern-size", synth.spec.pattern_size, "samples per planted pattern");
  synth_cmd->add_option("--noise", synth.spec.noise_misclassified, "scattered misclassified samples");
  synth_cmd->add_option("--spread", synth.spec.cluster_spread, "planted cluster standard deviation");
  synth_cmd->add_option("--separation", synth.spec.cluster_separation, "offset of planted clusters");
  synth_cmd->add_option("--seed", synth.spec.seed, "random seed");
  synth_cmd->add_flag("--standardize", synth.standardize, "store standardized embeddings");

  TruthArgs truth;
  auto* truth_cmd = app.add_subcommand("truth", "compute ground-truth failure patterns");
  truth_cmd->add_option("--data", truth.data, "dataset JSONL with true labels")->required();
  truth_cmd->add_option("--out", truth.out, "output JSON path")->required();
  truth_cmd->add_option("--knn", truth.knn, "neighbors per sample")->required();
  truth_cmd->add_option("--m", truth.m, "minimum pattern size")->required()->check(CLI::PositiveNumber);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "run one simulated annotation session");
  run_cmd->add_option("--data", run.data, "dataset JSONL with true labels")->required();
  run_cmd->add_option("--truth", run.truth, "ground-truth JSON (computed from the data when omitted)");
  run_cmd->add_option("--out", run.out, "output prefix for <prefix>.csv and <prefix>.json (CSV to stdout when omitted)");
  run_cmd->add_option("--strategy", run.strategy, "DS (directed) or US (uniform)")
      ->check(CLI::IsMember({"DS", "US", "ds", "us"}));
  run_cmd->add_option("--max-rounds", run.max_rounds, "cap on the number of rounds")->check(CLI::PositiveNumber);
  run_cmd->add_option("--cutoffs", run.cutoffs, "effectiveness cut-offs as fractions")->delimiter(',');
  add_session_flags(run_cmd, run.cfg);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "benchmark grid over datasets, strategies and seeds");
  bench_cmd->add_option("--data", bench.data, "dataset files (synthetic suite when omitted)");
  bench_cmd->add_option("--out", bench.out, "output prefix");
  bench_cmd->add_option("--thetas", bench.thetas, "directed-sampling weights")->delimiter(',')->check(CLI::Range(0.0, 1.0));
  bench_cmd->add_flag("!--no-us", bench.include_us, "skip the uniform baseline");
  bench_cmd->add_option("--seeds", bench.n_seeds, "number of seeds (1..N)")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--snr", bench.snr, "synthetic SNR groups")->delimiter(',');
  bench_cmd->add_option("--n", bench.base.n, "synthetic samples per dataset");
  bench_cmd->add_option("--d", bench.base.d, "synthetic embedding dimension");
  bench_cmd->add_option("--patterns", bench.base.n_patterns, "synthetic planted patterns");
  bench_cmd->add_option("--pattern-size", bench.base.pattern_size, "samples per planted pattern");
  bench_cmd->add_option("--spread", bench.base.cluster_spread, "planted cluster standard deviation");
  bench_cmd->add_option("--separation", bench.base.cluster_separation, "offset of planted clusters");
  bench_cmd->add_option("--cutoffs", bench.cutoffs, "effectiveness cut-offs as fractions")->delimiter(',');
  bench_cmd->add_option("--threads", bench.threads, "worker threads (0 = all cores)");
  add_session_flags(bench_cmd, bench.cfg);
  bench.cfg.k_nn = 10;

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "start the HTTP JSON API");
  serve_cmd->add_option("--port", serve.port, "listening port (default: FAILURE_SCOUT_PORT or 8080)")
      ->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", serve.host, "bind address");
  serve_cmd->add_option("--snapshot-dir", serve.snapshot_dir, "persist sessions as JSON snapshots here");

  std::vector<const char*> argv{"failure_scout"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*synth_cmd) return do_synth(synth, out);
    if (*truth_cmd) return do_truth(truth, out);
    if (*run_cmd) return do_run(run, out);
    if (*bench_cmd) return do_bench(bench, out);
    if (*serve_cmd) return do_serve(serve, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace failure_scout
