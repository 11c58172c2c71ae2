#include <doctest.h>

#include <fstream>
#include <random>

#include "failure_scout/data_model.hpp"
#include "failure_scout/errors.hpp"
#include "failure_scout/pattern_graph.hpp"
#include "oracles.hpp"

using namespace failure_scout;

namespace {

std::filesystem::path write_lines(const std::filesystem::path& dir, const std::string& name,
                                  const std::vector<std::string>& lines) {
  auto p = dir / name;
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
  return p;
}

}  // namespace

TEST_CASE("load_dataset parses a small JSONL file") {
  const auto dir = oracle::scratch_dir("load");
  const auto p = write_lines(dir, "a.jsonl",
                             {R"({"id":0,"embedding":[0.5,1],"pseudolabel":0,"true_label":1,"display":{"x2d":1,"y2d":2}})",
                              R"({"id":1,"embedding":[2,3],"pseudolabel":1,"true_label":1,"display":null})",
                              "",
                              R"({"id":2,"embedding":[4,5],"pseudolabel":1,"true_label":0,"display":{"image_url":"a.png"}})"});
  const Dataset ds = load_dataset(p);
  CHECK(ds.n() == 3);
  CHECK(ds.d() == 2);
  CHECK(ds.c() == 2);
  CHECK_FALSE(ds.standardized());
  CHECK(ds.embeddings()(0, 0) == 0.5);
  CHECK(*ds.true_label(2) == 0);
  CHECK(ds.display(0)->x2d == 1.0);
  CHECK_FALSE(ds.display(1).has_value());
  CHECK(*ds.display(2)->image_url == "a.png");
  CHECK(ds.misclassified_mask() == std::vector<bool>{true, false, true});
}

TEST_CASE("load_dataset errors") {
  const auto dir = oracle::scratch_dir("loaderr");
  SUBCASE("missing true label when required") {
    const auto p = write_lines(dir, "m.jsonl",
                               {R"({"embedding":[0],"pseudolabel":0,"true_label":0})",
                                R"({"embedding":[1],"pseudolabel":0,"true_label":null})"});
    CHECK_THROWS_AS(load_dataset(p, true), MissingLabelError);
    CHECK_NOTHROW(load_dataset(p, false));
    CHECK_THROWS_AS(load_dataset(p).misclassified_mask(), MissingLabelError);
  }
  SUBCASE("malformed line reports its number") {
    const auto p = write_lines(dir, "bad.jsonl", {R"({"embedding":[0],"pseudolabel":0})", "{not json"});
    try {
      load_dataset(p);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("dimension mismatch") {
    const auto p = write_lines(dir, "dim.jsonl",
                               {R"({"embedding":[0,1],"pseudolabel":0})", R"({"embedding":[0],"pseudolabel":0})"});
    CHECK_THROWS_AS(load_dataset(p), DimensionError);
  }
  SUBCASE("id out of order") {
    const auto p = write_lines(dir, "id.jsonl", {R"({"id":1,"embedding":[0],"pseudolabel":0})"});
    CHECK_THROWS_AS(load_dataset(p), ParseError);
  }
  SUBCASE("missing file names the path") {
    try {
      load_dataset(dir / "absent.jsonl");
      FAIL("expected an io error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("absent.jsonl") != std::string::npos);
    }
  }
  SUBCASE("pseudolabel outside the header class count") {
    const auto p = write_lines(dir, "c.jsonl", {R"({"embedding":[0],"pseudolabel":3})"});
    write_lines(dir, "c.jsonl.header.json", {R"({"n":1,"d":1,"c":2})"});
    CHECK_THROWS_AS(load_dataset(p), Error);
  }
}

TEST_CASE("save and load round-trip exactly") {
  SyntheticSpec spec;
  spec.n = 120;
  spec.d = 4;
  spec.n_patterns = 2;
  spec.pattern_size = 10;
  spec.noise_misclassified = 5;
  spec.seed = 3;
  const Dataset ds = generate_synthetic(spec).dataset;
  const auto dir = oracle::scratch_dir("roundtrip");
  save_dataset(ds, dir / "s.jsonl");
  CHECK(std::filesystem::exists(dir / "s.jsonl.header.json"));
  const Dataset back = load_dataset(dir / "s.jsonl");
  CHECK(back == ds);

  const Dataset scaled = standardize(ds);
  save_dataset(scaled, dir / "z.jsonl");
  CHECK(load_dataset(dir / "z.jsonl") == scaled);
}

TEST_CASE("standardize") {
  SUBCASE("two points") {
    Eigen::MatrixXd x(2, 1);
    x << 0, 2;
    const Dataset ds(x, {0, 1}, {}, {}, 2, false);
    const Dataset z = standardize(ds);
    CHECK(z.standardized());
    CHECK(z.embeddings()(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(z.embeddings()(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("constant column maps to zero") {
    Eigen::MatrixXd x(3, 2);
    x << 1, 7.3, 2, 7.3, 4, 7.3;
    const Dataset z = standardize(Dataset(x, {0, 0, 1}, {}, {}, 2, false));
    CHECK(z.embeddings().col(1).isZero(0.0));
  }
  SUBCASE("random 50x4 has zero mean and unit variance") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-5, 20);
    Eigen::MatrixXd x(50, 4);
    for (Eigen::Index i = 0; i < 50; ++i)
      for (Eigen::Index j = 0; j < 4; ++j) x(i, j) = u(rng) * (j + 1);
    std::vector<int> labels(50, 0);
    labels[0] = 1;
    const Dataset z = standardize(Dataset(x, labels, {}, {}, 2, false));
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double mean = z.embeddings().col(j).mean();
      const double var = (z.embeddings().col(j).array() - mean).square().mean();
      CHECK(std::abs(mean) <= 1e-12);
      CHECK(std::abs(var - 1.0) <= 1e-12);
    }
    SUBCASE("idempotent") {
      const Dataset zz = standardize(z);
      CHECK((zz.embeddings() - z.embeddings()).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("needs two samples") {
    Eigen::MatrixXd x(1, 1);
    x << 3;
    CHECK_THROWS_AS(standardize(Dataset(x, {0}, {}, {}, 1, false)), InsufficientDataError);
  }
}

TEST_CASE("generate_synthetic") {
  SyntheticSpec spec;
  spec.n = 300;
  spec.d = 5;
  spec.n_patterns = 4;
  spec.pattern_size = 20;
  spec.noise_misclassified = 40;
  spec.seed = 9;
  const SyntheticDataset a = generate_synthetic(spec);

  SUBCASE("deterministic and byte-identical on disk") {
    const SyntheticDataset b = generate_synthetic(spec);
    CHECK(a.dataset == b.dataset);
    const auto dir = oracle::scratch_dir("synth");
    save_dataset(a.dataset, dir / "a.jsonl");
    save_dataset(b.dataset, dir / "b.jsonl");
    std::ifstream fa(dir / "a.jsonl"), fb(dir / "b.jsonl");
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(sa == sb);
  }
  SUBCASE("signal to noise") { CHECK(a.snr() == doctest::Approx(2.0)); }
  SUBCASE("planted members are misclassified, the rest follow the noise flags") {
    const auto mask = a.dataset.misclassified_mask();
    for (SampleId i = 0; i < a.dataset.n(); ++i) {
      if (a.planted_cluster[i] >= 0)
        CHECK(mask[i]);
      else
        CHECK(mask[i] == a.noise[i]);
    }
    CHECK(std::count(a.noise.begin(), a.noise.end(), true) == 40);
  }
  SUBCASE("infeasible spec") {
    SyntheticSpec bad = spec;
    bad.n = 100;
    CHECK_THROWS_AS(generate_synthetic(bad), SpecError);
    bad = spec;
    bad.n_classes = 6;
    CHECK_THROWS_AS(generate_synthetic(bad), SpecError);
  }
  SUBCASE("planted clusters are recovered as ground-truth patterns") {
    // Tight clusters with k one below the cluster size: each cluster is a clique with no outside edges.
    const Dataset z = standardize(a.dataset);
    const auto g = build_mutual_knn(z, spec.pattern_size - 1);
    const PatternAssignment truth = ground_truth_patterns(g, z.misclassified_mask(), 10);
    REQUIRE(truth.p == 4);
    for (int p = 1; p <= truth.p; ++p) {
      const auto members = truth.members(p);
      const int cluster = a.planted_cluster[members.front()];
      REQUIRE(cluster >= 0);
      std::vector<SampleId> planted;
      for (SampleId i = 0; i < z.n(); ++i)
        if (a.planted_cluster[i] == cluster) planted.push_back(i);
      CHECK(members == planted);
    }
  }
}
