#include <doctest.h>

#include <fstream>

#include "failure_scout/benchmark.hpp"
#include "failure_scout/errors.hpp"
#include "oracles.hpp"

using namespace failure_scout;

namespace {

SuiteOptions small_suite() {
  SuiteOptions opt;
  opt.base.n = 300;
  opt.base.d = 5;
  opt.base.n_patterns = 3;
  opt.base.pattern_size = 15;
  opt.snr_groups = {{"low", 0.5}, {"high", 2.0}};
  opt.seeds = {1, 2};
  return opt;
}

std::vector<SessionConfig> configs() {
  SessionConfig ds;
  ds.batch_size = 30;
  ds.budget = 0.3;
  ds.k_nn = 10;
  SessionConfig us = ds;
  us.strategy = Strategy::US;
  return {ds, us};
}

}  // namespace

TEST_CASE("synthetic suite") {
  const auto suite = synthetic_suite(small_suite());
  REQUIRE(suite.size() == 4);
  CHECK(suite[0].group == "low");
  CHECK(suite[3].group == "high");
  for (const auto& b : suite) {
    CHECK(b.data.standardized());
    CHECK(b.graph);
    CHECK(b.truth.pattern_of.size() == b.data.n());
    CHECK(b.truth.k_nn == 10);
  }
  // Noise count follows the target SNR: 45 planted members.
  const auto low = suite[0].data.misclassified_mask();
  const auto high = suite[3].data.misclassified_mask();
  CHECK(std::count(low.begin(), low.end(), true) == 45 + 90);
  CHECK(std::count(high.begin(), high.end(), true) == 45 + 23);
  CHECK_FALSE(suite[0].data == suite[2].data);
}

TEST_CASE("benchmark grid and aggregation") {
  auto suite = synthetic_suite(small_suite());
  const auto cfgs = configs();
  const std::vector<std::uint64_t> seeds{11, 12, 13};
  const std::vector<double> cutoffs{0.1, 0.2};
  const auto report = run_benchmark(suite, cfgs, seeds, cutoffs, 2);

  // DS once per dataset, US once per seed.
  CHECK(report.cells.size() == 4 * (1 + 3));
  CHECK(report.per_dataset.size() == 4 * 2);
  CHECK(report.per_group.size() == 2 * 2);
  CHECK(report.overall.size() == 2);

  for (const auto& cell : report.cells) {
    CHECK(cell.error.empty());
    REQUIRE(cell.metrics);
    CHECK_FALSE(cell.rounds_csv.empty());
  }

  SUBCASE("group means are the mean of the group's cells") {
    const auto* row = report.find(report.per_group, "low", Strategy::US, cfgs[1].theta);
    REQUIRE(row);
    std::vector<double> values;
    for (const auto& cell : report.cells)
      if (cell.group == "low" && cell.strategy == Strategy::US) values.push_back(cell.metrics->sensitivity);
    REQUIRE(values.size() == 6);
    double mean = 0;
    for (double v : values) mean += v;
    mean /= 6;
    double ss = 0;
    for (double v : values) ss += (v - mean) * (v - mean);
    CHECK(row->runs == 6);
    CHECK(row->sensitivity.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(row->sensitivity.stddev == doctest::Approx(std::sqrt(ss / 5)).epsilon(1e-12));
    CHECK(row->effectiveness.size() == 2);
  }

  SUBCASE("outputs") {
    const auto dir = oracle::scratch_dir("bench");
    write_benchmark(report, dir / "b");
    std::ifstream rounds(dir / "b_rounds.csv");
    std::string header;
    std::getline(rounds, header);
    CHECK(header == kRoundCsvHeader);
    CHECK(std::filesystem::exists(dir / "b_summary.csv"));
    std::ifstream js(dir / "b.json");
    const auto j = nlohmann::json::parse(js);
    CHECK(j["cells"].size() == report.cells.size());
    const std::string summary = summary_csv(report);
    CHECK(summary.rfind("level,scope,strategy,theta,runs,failures,sensitivity_mean,sensitivity_std", 0) == 0);
  }
}

TEST_CASE("failing cells are recorded, not fatal") {
  auto suite = synthetic_suite(small_suite());
  const auto cfgs = configs();
  const std::vector<std::uint64_t> seeds{1};
  const std::vector<double> cutoffs{0.2};
  // Ground truth without patterns leaves the metrics of the first dataset undefined.
  suite[0].truth.pattern_of.assign(suite[0].data.n(), -1);
  suite[0].truth.p = 0;
  const auto report = run_benchmark(suite, cfgs, seeds, cutoffs, 1);
  std::size_t failed = 0;
  for (const auto& cell : report.cells) {
    if (cell.dataset == suite[0].name) {
      CHECK_FALSE(cell.error.empty());
      ++failed;
    } else {
      CHECK(cell.error.empty());
    }
  }
  CHECK(failed == 2);
  const auto* row = report.find(report.overall, "overall", Strategy::DS, cfgs[0].theta);
  REQUIRE(row);
  CHECK(row->failures == 1);
  CHECK(row->runs == 4);

  auto broken = synthetic_suite(small_suite());
  broken[1].truth.pattern_of.pop_back();
  CHECK_THROWS_AS(run_benchmark(broken, cfgs, seeds, cutoffs, 1), DimensionError);
}
