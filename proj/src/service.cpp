#include "failure_scout/service.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <httplib.h>

#include "failure_scout/errors.hpp"

namespace failure_scout {

using ojson = nlohmann::ordered_json;
using json = nlohmann::json;

std::string to_string(Phase p) {
  switch (p) {
    case Phase::AwaitingLabels:
      return "awaiting_labels";
    case Phase::Computing:
      return "computing";
    case Phase::Finished:
      return "finished";
  }
  return "unknown";
}

struct SessionService::Entry {
  std::string id;
  ojson request;
  std::vector<int> pseudolabels;
  std::vector<std::optional<Display>> display;
  std::unique_ptr<Session> session;
  ojson history = ojson::array();  // submitted label vectors, aligned with each batch

  std::mutex work_mu;
  mutable std::mutex view_mu;
  Phase phase = Phase::AwaitingLabels;
  ojson view;
};

namespace {

ServiceResponse error_response(int status, const std::string& message, ojson extra = ojson::object()) {
  ojson body;
  body["error"] = message;
  for (auto& [k, v] : extra.items()) body[k] = v;
  return {status, std::move(body)};
}

ojson descriptor(SampleId id, int pseudolabel, const std::optional<Display>& display) {
  ojson d;
  d["id"] = id;
  d["pseudolabel"] = pseudolabel;
  if (display) {
    ojson dj = ojson::object();
    if (display->x2d) dj["x2d"] = *display->x2d;
    if (display->y2d) dj["y2d"] = *display->y2d;
    if (display->image_url) dj["image_url"] = *display->image_url;
    d["display"] = std::move(dj);
  } else {
    d["display"] = nullptr;
  }
  return d;
}

template <typename T>
T optional_field(const json& body, const char* key, T fallback) {
  auto it = body.find(key);
  if (it == body.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParameterError(std::string("field '") + key + "' has the wrong type");
  }
}

std::size_t count_field(const json& body, const char* key, std::size_t fallback) {
  auto it = body.find(key);
  if (it == body.end() || it->is_null()) return fallback;
  if (!it->is_number_integer() || it->get<long long>() < 0)
    throw ParameterError(std::string("field '") + key + "' must be a non-negative integer");
  return it->get<std::size_t>();
}

SessionConfig config_from(const json& body) {
  SessionConfig cfg;
  cfg.theta = optional_field(body, "theta", cfg.theta);
  cfg.batch_size = count_field(body, "batch_size", cfg.batch_size);
  cfg.m_threshold = count_field(body, "m", cfg.m_threshold);
  cfg.k_nn = count_field(body, "knn", cfg.k_nn);
  cfg.budget = optional_field(body, "budget", cfg.budget);
  if (auto it = body.find("max_rounds"); it != body.end() && !it->is_null())
    cfg.max_rounds = count_field(body, "max_rounds", 0);
  cfg.seed = optional_field<std::uint64_t>(body, "seed", cfg.seed);
  cfg.strategy = parse_strategy(optional_field<std::string>(body, "strategy", to_string(cfg.strategy)));
  cfg.validate();
  return cfg;
}

void write_snapshot(const std::filesystem::path& dir, const ojson& content, const std::string& id) {
  std::filesystem::create_directories(dir);
  const auto target = dir / (id + ".json");
  auto tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write session snapshot " + tmp.string());
    out << content.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace

SessionService::SessionService(std::optional<std::filesystem::path> snapshot_dir)
    : snapshot_dir_(std::move(snapshot_dir)), salt_(std::random_device{}()) {}

SessionService::~SessionService() = default;

std::string SessionService::next_id() {
  std::lock_guard lock(registry_mu_);
  std::ostringstream out;
  out << std::hex << (salt_ & 0xffffff) << '-' << std::dec << ++counter_;
  return out.str();
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) const {
  std::lock_guard lock(registry_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionService::size() const {
  std::lock_guard lock(registry_mu_);
  return sessions_.size();
}

namespace {

ojson build_view(const std::string& id, Phase phase, const Session& s, const std::vector<int>& pseudo,
                 const std::vector<std::optional<Display>>& display) {
  ojson v;
  v["session_id"] = id;
  v["phase"] = to_string(phase);
  v["n"] = s.n();
  v["n_classes"] = s.n_classes();
  v["batch_size"] = s.config().batch_size;
  v["query_cap"] = s.config().query_cap(s.n());
  v["queried_count"] = s.queried_count();
  v["rounds_completed"] = s.rounds_completed();
  ojson patterns = ojson::array();
  ojson pattern_rounds = ojson::array();
  for (const auto& p : s.detection().confirmed) {
    patterns.push_back(p.members);
    pattern_rounds.push_back(p.round);
  }
  v["confirmed_patterns"] = std::move(patterns);
  v["pattern_rounds"] = std::move(pattern_rounds);
  ojson batch = ojson::array();
  for (SampleId id2 : s.pending()) batch.push_back(descriptor(id2, pseudo[id2], display[id2]));
  v["pending_batch"] = std::move(batch);
  return v;
}

Phase phase_of(const Session& s) { return s.finished() ? Phase::Finished : Phase::AwaitingLabels; }

/// Builds a session from a create request. True labels are dropped before
/// the engine ever sees the dataset.
std::unique_ptr<Session> open_session(const json& body, std::vector<int>& pseudo,
                                      std::vector<std::optional<Display>>& display) {
  auto path_it = body.find("dataset_path");
  if (path_it == body.end() || !path_it->is_string()) throw ParameterError("field 'dataset_path' is required");
  const SessionConfig cfg = config_from(body);
  Dataset loaded = load_dataset(path_it->get<std::string>());
  if (!loaded.standardized()) loaded = standardize(loaded);
  std::vector<std::optional<Display>> disp(loaded.n());
  for (SampleId i = 0; i < loaded.n(); ++i) disp[i] = loaded.display(i);
  const std::vector<int> labels(loaded.pseudolabels().begin(), loaded.pseudolabels().end());
  const Dataset blind(loaded.embeddings(), labels, {}, disp, loaded.c(), true);
  auto session = std::make_unique<Session>(blind, cfg);
  session->propose();
  pseudo = labels;
  display = std::move(disp);
  return session;
}

}  // namespace

ServiceResponse SessionService::create(const json& body) {
  if (!body.is_object()) return error_response(400, "request body must be a JSON object");
  auto entry = std::make_shared<Entry>();
  try {
    entry->session = open_session(body, entry->pseudolabels, entry->display);
  } catch (const IoError& e) {
    return error_response(404, e.what());
  } catch (const ParameterError& e) {
    return error_response(422, e.what());
  } catch (const Error& e) {
    return error_response(400, e.what());
  }
  entry->id = next_id();
  entry->request = body;
  entry->phase = phase_of(*entry->session);
  entry->view = build_view(entry->id, entry->phase, *entry->session, entry->pseudolabels, entry->display);
  if (snapshot_dir_)
    write_snapshot(*snapshot_dir_, {{"request", entry->request}, {"labels", entry->history}, {"view", entry->view}},
                   entry->id);
  {
    std::lock_guard lock(registry_mu_);
    sessions_[entry->id] = entry;
  }
  return {201, entry->view};
}

ServiceResponse SessionService::get(const std::string& id) const {
  auto entry = find(id);
  if (!entry) return error_response(404, "unknown session " + id);
  std::lock_guard lock(entry->view_mu);
  return {200, entry->view};
}

ServiceResponse SessionService::submit_labels(const std::string& id, const json& body) {
  auto entry = find(id);
  if (!entry) return error_response(404, "unknown session " + id);
  std::unique_lock work(entry->work_mu, std::try_to_lock);
  if (!work.owns_lock()) return error_response(409, "session " + id + " is computing");
  if (entry->phase == Phase::Finished) return error_response(409, "session " + id + " is finished");

  auto labels_it = body.is_object() ? body.find("labels") : body.end();
  if (!body.is_object() || labels_it == body.end() || !labels_it->is_array())
    return error_response(400, "body must be {\"labels\": [{\"id\": ..., \"true_label\": ...}]}");

  Session& session = *entry->session;
  const std::vector<SampleId> pending = session.pending();
  std::map<SampleId, int> given;
  std::vector<SampleId> duplicates;
  for (const auto& item : *labels_it) {
    auto id_it = item.is_object() ? item.find("id") : item.end();
    auto y_it = item.is_object() ? item.find("true_label") : item.end();
    if (!item.is_object() || id_it == item.end() || y_it == item.end() || !id_it->is_number_unsigned() ||
        !y_it->is_number_integer())
      return error_response(400, "each label must be {\"id\": <non-negative int>, \"true_label\": <int>}");
    const auto sid = id_it->get<SampleId>();
    if (!given.emplace(sid, y_it->get<int>()).second) duplicates.push_back(sid);
  }
  std::vector<SampleId> missing, extra;
  for (SampleId sid : pending)
    if (!given.contains(sid)) missing.push_back(sid);
  for (const auto& [sid, y] : given)
    if (!std::binary_search(pending.begin(), pending.end(), sid)) extra.push_back(sid);
  if (!missing.empty() || !extra.empty() || !duplicates.empty()) {
    std::ostringstream msg;
    msg << "label set must cover exactly the pending batch";
    auto list = [&](const char* what, const std::vector<SampleId>& ids) {
      if (ids.empty()) return;
      msg << "; " << what << ':';
      for (SampleId sid : ids) msg << ' ' << sid;
    };
    list("missing ids", missing);
    list("unexpected ids", extra);
    list("duplicate ids", duplicates);
    return error_response(422, msg.str(), {{"missing", missing}, {"extra", extra}, {"duplicates", duplicates}});
  }
  std::vector<int> aligned;
  for (SampleId sid : pending) {
    const int y = given[sid];
    if (y < 0 || y >= session.n_classes())
      return error_response(422, "true_label " + std::to_string(y) + " of id " + std::to_string(sid) +
                                     " is outside [0, " + std::to_string(session.n_classes()) + ")");
    aligned.push_back(y);
  }

  {
    std::lock_guard lock(entry->view_mu);
    entry->phase = Phase::Computing;
    entry->view["phase"] = to_string(Phase::Computing);
  }
  ojson round_json;
  try {
    const RoundLog& log = session.submit(aligned);
    entry->history.push_back(aligned);
    round_json["round"] = log.round;
    std::vector<SampleId> wrong;
    for (std::size_t k = 0; k < log.chosen.size(); ++k)
      if (log.misclassified[k]) wrong.push_back(log.chosen[k]);
    round_json["misclassified"] = wrong;
    round_json["new_patterns"] = log.new_patterns;
    round_json["queried_cum"] = log.queried_cum;
    session.propose();
  } catch (const std::exception& e) {
    std::lock_guard lock(entry->view_mu);
    entry->phase = Phase::Finished;
    entry->view = build_view(entry->id, entry->phase, session, entry->pseudolabels, entry->display);
    entry->view["phase"] = to_string(Phase::Finished);
    entry->view["error"] = e.what();
    return error_response(500, e.what());
  }

  ojson view;
  {
    std::lock_guard lock(entry->view_mu);
    entry->phase = phase_of(session);
    entry->view = build_view(entry->id, entry->phase, session, entry->pseudolabels, entry->display);
    view = entry->view;
  }
  if (snapshot_dir_)
    write_snapshot(*snapshot_dir_, {{"request", entry->request}, {"labels", entry->history}, {"view", view}},
                   entry->id);
  view["last_round"] = std::move(round_json);
  return {200, std::move(view)};
}

ServiceResponse SessionService::remove(const std::string& id) {
  std::shared_ptr<Entry> entry;
  {
    std::lock_guard lock(registry_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return error_response(404, "unknown session " + id);
    entry = std::move(it->second);
    sessions_.erase(it);
  }
  if (snapshot_dir_) {
    std::error_code ec;
    std::filesystem::remove(*snapshot_dir_ / (id + ".json"), ec);
  }
  return {200, {{"session_id", id}, {"deleted", true}}};
}

std::size_t SessionService::restore_snapshots() {
  if (!snapshot_dir_ || !std::filesystem::is_directory(*snapshot_dir_)) return 0;
  std::size_t restored = 0;
  for (const auto& file : std::filesystem::directory_iterator(*snapshot_dir_)) {
    if (file.path().extension() != ".json") continue;
    std::ifstream in(file.path());
    const json snap = json::parse(in, nullptr, false);
    if (snap.is_discarded() || !snap.contains("request") || !snap.contains("labels"))
      throw IoError("malformed session snapshot " + file.path().string());
    auto entry = std::make_shared<Entry>();
    entry->id = file.path().stem().string();
    entry->request = snap["request"];
    entry->session = open_session(snap["request"], entry->pseudolabels, entry->display);
    for (const auto& labels : snap["labels"]) {
      const auto aligned = labels.get<std::vector<int>>();
      entry->session->submit(aligned);
      entry->history.push_back(aligned);
      entry->session->propose();
    }
    entry->phase = phase_of(*entry->session);
    entry->view = build_view(entry->id, entry->phase, *entry->session, entry->pseudolabels, entry->display);
    std::lock_guard lock(registry_mu_);
    sessions_[entry->id] = std::move(entry);
    ++restored;
  }
  return restored;
}

void register_routes(httplib::Server& server, SessionService& service) {
  auto reply = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto parse = [](const httplib::Request& req, json& out) {
    out = json::parse(req.body, nullptr, false);
    return !out.is_discarded();
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/sessions.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.Post("/sessions", [&service, reply, parse](const httplib::Request& req, httplib::Response& res) {
    json body;
    if (!parse(req, body)) return reply(res, error_response(400, "request body is not valid JSON"));
    reply(res, service.create(body));
  });
  server.Get(R"(/sessions/([^/]+))", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.get(req.matches[1]));
  });
  server.Post(R"(/sessions/([^/]+)/labels)",
              [&service, reply, parse](const httplib::Request& req, httplib::Response& res) {
                json body;
                if (!parse(req, body)) return reply(res, error_response(400, "request body is not valid JSON"));
                reply(res, service.submit_labels(req.matches[1], body));
              });
  server.Delete(R"(/sessions/([^/]+))", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.remove(req.matches[1]));
  });
}

int resolve_port(std::optional<int> flag, int fallback) {
  auto check = [](int port) {
    if (port < 0 || port > 65535) throw ParameterError("port " + std::to_string(port) + " out of range");
    return port;
  };
  if (flag) return check(*flag);
  if (const char* env = std::getenv("FAILURE_SCOUT_PORT"); env && *env) {
    int port = 0;
    const char* end = env + std::char_traits<char>::length(env);
    auto [ptr, ec] = std::from_chars(env, end, port);
    if (ec != std::errc{} || ptr != end) throw ParameterError(std::string("FAILURE_SCOUT_PORT is not a number: ") + env);
    return check(port);
  }
  return check(fallback);
}

}  // namespace failure_scout
