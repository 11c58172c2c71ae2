#include <doctest.h>

#include <set>

#include "failure_scout/engine.hpp"
#include "failure_scout/errors.hpp"

using namespace failure_scout;

namespace {

struct Fixture {
  Dataset data;
  std::shared_ptr<const MutualKnnGraph> graph;
  PatternAssignment truth;
};

Fixture make_fixture(std::size_t n, std::uint64_t seed, std::size_t k_nn = 10) {
  SyntheticSpec spec;
  spec.n = n;
  spec.d = 5;
  spec.n_patterns = 4;
  spec.pattern_size = 20;
  spec.noise_misclassified = 40;
  spec.seed = seed;
  Dataset data = standardize(generate_synthetic(spec).dataset);
  auto graph = std::make_shared<const MutualKnnGraph>(build_mutual_knn(data, k_nn));
  PatternAssignment truth = ground_truth_patterns(*graph, data.misclassified_mask(), 10);
  return {std::move(data), std::move(graph), std::move(truth)};
}

SessionConfig config(double theta, std::size_t batch, double budget) {
  SessionConfig cfg;
  cfg.theta = theta;
  cfg.batch_size = batch;
  cfg.budget = budget;
  cfg.k_nn = 10;
  return cfg;
}

class FailingAnnotator final : public Annotator {
 public:
  FailingAnnotator(const Dataset& ds, int fail_on_call) : inner_(ds), fail_on_call_(fail_on_call) {}
  std::vector<int> annotate(std::span<const SampleId> ids) override {
    if (++calls_ == fail_on_call_) throw AnnotatorError("annotator went away");
    return inner_.annotate(ids);
  }

 private:
  OracleAnnotator inner_;
  int fail_on_call_;
  int calls_ = 0;
};

}  // namespace

TEST_CASE("session configuration") {
  SessionConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.budget = 0.1;
  CHECK(cfg.query_cap(500) == 50);
  cfg.budget = 0.3;
  CHECK(cfg.query_cap(10) == 3);
  cfg.max_rounds = 1;
  CHECK(cfg.query_cap(10) == 3);
  cfg.batch_size = 2;
  CHECK(cfg.query_cap(10) == 2);

  SessionConfig bad;
  bad.theta = 1.5;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = {};
  bad.budget = 0.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = {};
  bad.bounds.lower = 1.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  CHECK(parse_strategy("US") == Strategy::US);
  CHECK_THROWS_AS(parse_strategy("XS"), ParameterError);
}

TEST_CASE("budget bounds the number of rounds") {
  const Fixture f = make_fixture(500, 2);
  OracleAnnotator oracle(f.data);
  const auto r = run_session(f.data, f.graph, config(0.25, 25, 0.1), oracle);
  CHECK(r.rounds.size() == 2);
  CHECK(r.queried() == 50);
  CHECK_FALSE(r.aborted);
}

TEST_CASE("a single batch covering everything finds every pattern") {
  const Fixture f = make_fixture(300, 4);
  REQUIRE(f.truth.p == 4);
  OracleAnnotator oracle(f.data);
  const auto r = run_session(f.data, f.graph, config(0.25, 300, 1.0), oracle);
  REQUIRE(r.rounds.size() == 1);
  CHECK(r.rounds[0].chosen.size() == 300);
  const std::vector<double> cutoffs{1.0};
  const auto m = evaluate_metrics(r, f.truth, cutoffs);
  CHECK(m.effectiveness[0] == 1.0);
  CHECK(m.patterns_detected == 4);
  CHECK(m.sensitivity == 1.0);
}

TEST_CASE("sessions are deterministic") {
  const Fixture f = make_fixture(400, 5);
  for (const auto strategy : {Strategy::DS, Strategy::US}) {
    SessionConfig cfg = config(0.5, 20, 0.25);
    cfg.strategy = strategy;
    cfg.seed = 77;
    OracleAnnotator a(f.data), b(f.data);
    const auto ra = run_session(f.data, f.graph, cfg, a, "x");
    const auto rb = run_session(f.data, f.graph, cfg, b, "x");
    CHECK(round_csv_rows(ra, &f.truth) == round_csv_rows(rb, &f.truth));
    const std::vector<double> cutoffs{0.1, 0.2};
    CHECK(session_summary(ra, &f.truth, cutoffs).dump() == session_summary(rb, &f.truth, cutoffs).dump());
  }
}

TEST_CASE("session invariants hold every round") {
  const Fixture f = make_fixture(400, 6);
  for (double theta : {0.0, 0.25, 1.0}) {
    for (const auto strategy : {Strategy::DS, Strategy::US}) {
      SessionConfig cfg = config(theta, 17, 1.0);
      cfg.strategy = strategy;
      cfg.seed = 3;
      Session session(f.data, f.graph, cfg);
      std::set<SampleId> seen;
      std::set<SampleId> in_patterns;
      OracleAnnotator oracle(f.data);
      while (!session.finished()) {
        const auto batch = session.propose();
        CHECK(std::is_sorted(batch.begin(), batch.end()));
        for (SampleId id : batch) CHECK(seen.insert(id).second);
        const auto& log = session.submit(oracle.annotate(batch));
        CHECK(log.queried_cum == seen.size());
        for (const auto& members : log.new_patterns) {
          CHECK(members.size() >= cfg.m_threshold);
          for (SampleId id : members) {
            CHECK(seen.count(id) == 1);
            CHECK(f.data.misclassified_mask()[id]);
            CHECK(in_patterns.insert(id).second);
            CHECK(session.gp().observed_value(id) == cfg.bounds.lower);
          }
        }
      }
      CHECK(seen.size() == 400);
      CHECK(session.rounds_completed() == 24);
    }
  }
}

TEST_CASE("more budget never loses progress") {
  const Fixture f = make_fixture(400, 7);
  OracleAnnotator oracle(f.data);
  const auto small = run_session(f.data, f.graph, config(0.25, 20, 0.2), oracle);
  const auto large = run_session(f.data, f.graph, config(0.25, 20, 0.6), oracle);
  REQUIRE(large.rounds.size() > small.rounds.size());
  for (std::size_t i = 0; i < small.rounds.size(); ++i) {
    CHECK(small.rounds[i].chosen == large.rounds[i].chosen);
    CHECK(small.rounds[i].new_patterns == large.rounds[i].new_patterns);
  }
  CHECK(large.confirmed.size() >= small.confirmed.size());
}

TEST_CASE("metric conventions") {
  PatternAssignment truth;
  truth.pattern_of.assign(100, -1);
  for (SampleId i = 0; i < 10; ++i) truth.pattern_of[i] = 1;
  for (SampleId i = 10; i < 20; ++i) truth.pattern_of[i] = 2;
  truth.p = 2;

  SessionResult r;
  r.n = 100;
  RoundLog first;
  first.round = 1;
  first.queried_cum = 10;
  first.new_patterns = {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
  RoundLog second;
  second.round = 2;
  second.queried_cum = 30;
  second.new_patterns = {{10, 11, 12, 13, 14, 15, 16, 17, 18, 19}};
  r.rounds = {first, second};

  const std::vector<double> cutoffs{0.1, 0.2, 0.3};
  const auto m = evaluate_metrics(r, truth, cutoffs);
  CHECK(m.sensitivity == 0.1);
  CHECK(m.effectiveness == std::vector<double>{0.5, 0.5, 1.0});
  CHECK(m.detected_at[1] == std::optional<std::size_t>(30));

  SUBCASE("nothing matched") {
    SessionResult empty;
    empty.n = 100;
    const auto none = evaluate_metrics(empty, truth, cutoffs);
    CHECK(none.sensitivity == 1.0);
    CHECK_FALSE(none.first_pattern_queried_at.has_value());
    CHECK(none.effectiveness == std::vector<double>{0.0, 0.0, 0.0});
  }
  SUBCASE("a second match of the same pattern is not counted twice") {
    SessionResult dup = r;
    dup.rounds[1].new_patterns = {{0, 1, 2}};
    const auto d = evaluate_metrics(dup, truth, cutoffs);
    CHECK(d.patterns_detected == 1);
    CHECK(d.effectiveness.back() == 0.5);
  }
  SUBCASE("no ground-truth patterns") {
    PatternAssignment none;
    none.pattern_of.assign(100, -1);
    CHECK_THROWS_AS(evaluate_metrics(r, none, cutoffs), UndefinedMetricsError);
  }
}

TEST_CASE("round CSV") {
  const Fixture f = make_fixture(300, 8);
  OracleAnnotator oracle(f.data);
  SessionConfig cfg = config(0.0, 30, 0.2);
  const auto r = run_session(f.data, f.graph, cfg, oracle, "toy");
  const std::string rows = round_csv_rows(r, &f.truth);
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 2);
  CHECK(rows.rfind("toy,DS,0,0,1,30,", 0) == 0);
  const std::string header = kRoundCsvHeader;
  CHECK(std::count(header.begin(), header.end(), ',') ==
        std::count(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(rows.find('\n')), ','));
}

TEST_CASE("annotator failure aborts with a partial result") {
  const Fixture f = make_fixture(300, 9);
  FailingAnnotator flaky(f.data, 3);
  const auto r = run_session(f.data, f.graph, config(0.25, 20, 1.0), flaky);
  CHECK(r.aborted);
  CHECK(r.rounds.size() == 2);
  CHECK(r.error.find("annotator went away") != std::string::npos);
}

TEST_CASE("session input checks") {
  const Fixture f = make_fixture(300, 10);
  SUBCASE("unstandardized data") {
    SyntheticSpec spec;
    spec.n = 300;
    spec.n_patterns = 2;
    spec.pattern_size = 20;
    spec.noise_misclassified = 20;
    const Dataset raw = generate_synthetic(spec).dataset;
    CHECK_THROWS_AS(Session(raw, SessionConfig{}), ParameterError);
  }
  SUBCASE("submit validation") {
    Session s(f.data, f.graph, config(0.25, 10, 1.0));
    CHECK_THROWS_AS(s.submit(std::vector<int>{}), ConsistencyError);
    const auto batch = s.propose();
    CHECK_THROWS_AS(s.submit(std::vector<int>(batch.size() - 1, 0)), ParameterError);
    CHECK_THROWS_AS(s.submit(std::vector<int>(batch.size(), 99)), ParameterError);
    CHECK(s.propose() == batch);
    CHECK(s.queried_count() == 0);
  }
  SUBCASE("graph size mismatch") {
    const Fixture other = make_fixture(400, 10);
    CHECK_THROWS_AS(Session(f.data, other.graph, SessionConfig{}), DimensionError);
  }
}
