#include <doctest.h>

#include <cstdlib>
#include <thread>

#include "failure_scout/errors.hpp"
#include "failure_scout/service.hpp"
#include "oracles.hpp"

// httplib after Eigen-based headers: <resolv.h> defines a `_res` macro.
#include <httplib.h>

using namespace failure_scout;
using json = nlohmann::json;

namespace {

struct DatasetFile {
  std::filesystem::path path;
  Dataset data;  // as written, with true labels
};

DatasetFile write_dataset(const std::string& tag, std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n = n;
  spec.d = 5;
  spec.n_patterns = 4;
  spec.pattern_size = 20;
  spec.noise_misclassified = 40;
  spec.seed = seed;
  Dataset data = generate_synthetic(spec).dataset;
  const auto path = oracle::scratch_dir(tag) / "data.jsonl";
  save_dataset(data, path);
  return {path, std::move(data)};
}

json labels_for(const Dataset& ds, const nlohmann::ordered_json& view) {
  json labels = json::array();
  for (const auto& item : view["pending_batch"]) {
    const auto id = item["id"].get<SampleId>();
    labels.push_back({{"id", id}, {"true_label", *ds.true_label(id)}});
  }
  return {{"labels", labels}};
}

json create_body(const DatasetFile& f, std::size_t batch) {
  return {{"dataset_path", f.path.string()}, {"batch_size", batch}, {"theta", 0.25}, {"knn", 10}, {"m", 10},
          {"seed", 5}};
}

}  // namespace

TEST_CASE("create and inspect a session") {
  const auto f = write_dataset("svc_create", 300, 1);
  SessionService service;
  const auto created = service.create(create_body(f, 25));
  REQUIRE(created.status == 201);
  const auto& view = created.body;
  CHECK(view["phase"] == "awaiting_labels");
  CHECK(view["n"] == 300);
  CHECK(view["pending_batch"].size() == 25);
  CHECK(view["queried_count"] == 0);
  CHECK(view["query_cap"] == 300);
  CHECK(view["confirmed_patterns"].empty());
  for (const auto& item : view["pending_batch"]) {
    const auto id = item["id"].get<SampleId>();
    CHECK(item["pseudolabel"] == f.data.pseudolabels()[id]);
    CHECK(item.contains("display"));
  }
  CHECK(view.dump().find("true_label") == std::string::npos);

  const auto got = service.get(view["session_id"].get<std::string>());
  CHECK(got.status == 200);
  CHECK(got.body == view);
  CHECK(service.size() == 1);
}

TEST_CASE("create rejects bad requests") {
  const auto f = write_dataset("svc_bad", 300, 1);
  SessionService service;
  CHECK(service.create(json::array()).status == 400);
  CHECK(service.create(json::object()).status == 422);
  CHECK(service.create({{"dataset_path", (f.path.parent_path() / "nope.jsonl").string()}}).status == 404);
  CHECK(service.create({{"dataset_path", f.path.string()}, {"theta", 2.0}}).status == 422);
  CHECK(service.create({{"dataset_path", f.path.string()}, {"batch_size", -3}}).status == 422);
  CHECK(service.create({{"dataset_path", f.path.string()}, {"strategy", "XS"}}).status == 422);
  CHECK(service.size() == 0);
}

TEST_CASE("label submission") {
  const auto f = write_dataset("svc_labels", 300, 2);
  SessionService service;
  const auto created = service.create(create_body(f, 25));
  const std::string id = created.body["session_id"];
  json body = labels_for(f.data, created.body);

  SUBCASE("one label short names the missing id") {
    const auto dropped = body["labels"].back()["id"].get<SampleId>();
    body["labels"].erase(body["labels"].size() - 1);
    const auto r = service.submit_labels(id, body);
    CHECK(r.status == 422);
    CHECK(r.body["missing"] == json::array({dropped}));
    CHECK(r.body["error"].get<std::string>().find("missing ids: " + std::to_string(dropped)) != std::string::npos);
    CHECK(service.get(id).body["queried_count"] == 0);
  }
  SUBCASE("extra and duplicate ids") {
    json extra = body;
    SampleId outsider = 0;
    while (std::any_of(body["labels"].begin(), body["labels"].end(),
                       [&](const json& l) { return l["id"] == outsider; }))
      ++outsider;
    extra["labels"].push_back({{"id", outsider}, {"true_label", 0}});
    auto r = service.submit_labels(id, extra);
    CHECK(r.status == 422);
    CHECK(r.body["extra"] == json::array({outsider}));
    json dup = body;
    dup["labels"].push_back(body["labels"][0]);
    r = service.submit_labels(id, dup);
    CHECK(r.status == 422);
    CHECK(r.body["duplicates"].size() == 1);
  }
  SUBCASE("malformed bodies and labels") {
    CHECK(service.submit_labels(id, json::array()).status == 400);
    CHECK(service.submit_labels(id, {{"labels", 3}}).status == 400);
    CHECK(service.submit_labels(id, {{"labels", {{{"id", -1}, {"true_label", 0}}}}}).status == 400);
    json bad = body;
    bad["labels"][0]["true_label"] = 7;
    CHECK(service.submit_labels(id, bad).status == 422);
  }
  SUBCASE("a valid batch advances the session") {
    const auto r = service.submit_labels(id, body);
    REQUIRE(r.status == 200);
    CHECK(r.body["queried_count"] == 25);
    CHECK(r.body["rounds_completed"] == 1);
    CHECK(r.body["last_round"]["round"] == 1);
    CHECK(r.body["last_round"]["queried_cum"] == 25);
    std::size_t wrong = 0;
    for (const auto& l : body["labels"])
      if (l["true_label"] != f.data.pseudolabels()[l["id"].get<SampleId>()]) ++wrong;
    CHECK(r.body["last_round"]["misclassified"].size() == wrong);
    CHECK(r.body["pending_batch"].size() == 25);
    CHECK(r.body.dump().find("true_label") == std::string::npos);
    // Resubmitting the old batch no longer matches.
    CHECK(service.submit_labels(id, body).status == 422);
  }
  SUBCASE("unknown sessions") {
    CHECK(service.get("nope").status == 404);
    CHECK(service.submit_labels("nope", body).status == 404);
    CHECK(service.remove("nope").status == 404);
    CHECK(service.remove(id).status == 200);
    CHECK(service.get(id).status == 404);
  }
}

TEST_CASE("enough connected misclassified samples confirm a pattern") {
  const auto f = write_dataset("svc_pattern", 300, 3);
  const Dataset z = standardize(f.data);
  const auto truth = ground_truth_patterns(build_mutual_knn(z, 10), z.misclassified_mask(), 10);
  REQUIRE(truth.p > 0);

  SessionService service;
  const auto created = service.create(create_body(f, 300));
  const std::string id = created.body["session_id"];
  const auto r = service.submit_labels(id, labels_for(f.data, created.body));
  REQUIRE(r.status == 200);
  CHECK(r.body["phase"] == "finished");
  CHECK(r.body["last_round"]["new_patterns"].size() == static_cast<std::size_t>(truth.p));
  CHECK(r.body["confirmed_patterns"].size() == static_cast<std::size_t>(truth.p));
  CHECK(r.body["pending_batch"].empty());
  for (const auto& p : r.body["confirmed_patterns"]) CHECK(p.size() >= 10);
  CHECK(service.submit_labels(id, json{{"labels", json::array()}}).status == 409);
}

TEST_CASE("service sessions match direct engine sessions") {
  const auto f = write_dataset("svc_equiv", 300, 4);
  SessionService service;
  auto view = service.create(create_body(f, 20)).body;
  const std::string id = view["session_id"];

  SessionConfig cfg;
  cfg.batch_size = 20;
  cfg.theta = 0.25;
  cfg.k_nn = 10;
  cfg.m_threshold = 10;
  cfg.seed = 5;
  const Dataset z = standardize(f.data);
  OracleAnnotator oracle(z);
  const auto direct = run_session(z, std::make_shared<const MutualKnnGraph>(build_mutual_knn(z, 10)), cfg, oracle);

  for (const auto& round : direct.rounds) {
    std::vector<SampleId> pending;
    for (const auto& item : view["pending_batch"]) pending.push_back(item["id"]);
    CHECK(pending == round.chosen);
    const auto r = service.submit_labels(id, labels_for(f.data, view));
    REQUIRE(r.status == 200);
    CHECK(r.body["last_round"]["new_patterns"] == nlohmann::ordered_json(round.new_patterns));
    view = r.body;
  }
  CHECK(view["phase"] == "finished");
}

TEST_CASE("a submission during computation gets 409") {
  const auto f = write_dataset("svc_busy", 2000, 5);
  SessionService service;
  json req = create_body(f, 100);
  req["theta"] = 1.0;
  const auto created = service.create(req);
  const std::string id = created.body["session_id"];
  const json body = labels_for(f.data, created.body);

  int first_status = 0;
  std::thread worker([&] { first_status = service.submit_labels(id, body).status; });
  bool saw_computing = false;
  int second_status = 0;
  for (int spin = 0; spin < 10'000'000 && !saw_computing; ++spin) {
    if (service.get(id).body["phase"] == "computing") {
      saw_computing = true;
      second_status = service.submit_labels(id, body).status;
    }
  }
  worker.join();
  REQUIRE(saw_computing);
  CHECK(second_status == 409);
  CHECK(first_status == 200);
}

TEST_CASE("snapshots restore sessions after a restart") {
  const auto f = write_dataset("svc_snap", 300, 6);
  const auto dir = oracle::scratch_dir("svc_snap_store");
  std::string id;
  nlohmann::ordered_json before;
  {
    SessionService service(dir);
    const auto created = service.create(create_body(f, 30));
    id = created.body["session_id"];
    auto r = service.submit_labels(id, labels_for(f.data, created.body));
    r = service.submit_labels(id, labels_for(f.data, r.body));
    REQUIRE(r.status == 200);
    before = service.get(id).body;
    CHECK(std::filesystem::exists(dir / (id + ".json")));
  }
  SessionService restarted(dir);
  CHECK(restarted.restore_snapshots() == 1);
  CHECK(restarted.get(id).body == before);
  CHECK(restarted.submit_labels(id, labels_for(f.data, before)).status == 200);
  CHECK(restarted.remove(id).status == 200);
  CHECK_FALSE(std::filesystem::exists(dir / (id + ".json")));
}

TEST_CASE("port resolution") {
  ::unsetenv("FAILURE_SCOUT_PORT");
  CHECK(resolve_port(std::nullopt) == 8080);
  CHECK(resolve_port(9000) == 9000);
  ::setenv("FAILURE_SCOUT_PORT", "9123", 1);
  CHECK(resolve_port(std::nullopt) == 9123);
  CHECK(resolve_port(9000) == 9000);
  ::setenv("FAILURE_SCOUT_PORT", "80x", 1);
  CHECK_THROWS_AS(resolve_port(std::nullopt), ParameterError);
  ::unsetenv("FAILURE_SCOUT_PORT");
  CHECK_THROWS_AS(resolve_port(70000), ParameterError);
}

TEST_CASE("HTTP round trip on localhost") {
  const auto f = write_dataset("svc_http", 300, 7);
  SessionService service;
  httplib::Server server;
  register_routes(server, service);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto res = client.Post("/sessions", create_body(f, 25).dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  const auto view = nlohmann::ordered_json::parse(res->body);
  const std::string id = view["session_id"];

  res = client.Get("/sessions/" + id);
  REQUIRE(res);
  CHECK(res->status == 200);

  res = client.Post("/sessions/" + id + "/labels", labels_for(f.data, view).dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["queried_count"] == 25);

  res = client.Post("/sessions/" + id + "/labels", "{not json", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  res = client.Options("/sessions");
  REQUIRE(res);
  CHECK(res->status == 204);

  res = client.Delete("/sessions/" + id);
  REQUIRE(res);
  CHECK(res->status == 200);
  res = client.Get("/sessions/" + id);
  REQUIRE(res);
  CHECK(res->status == 404);

  server.stop();
  listener.join();
}
