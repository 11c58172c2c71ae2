#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "failure_scout/engine.hpp"

namespace httplib {
class Server;
}

namespace failure_scout {

enum class Phase { AwaitingLabels, Computing, Finished };

std::string to_string(Phase p);

/// HTTP-shaped reply: status code plus JSON body.
struct ServiceResponse {
  int status = 200;
  nlohmann::ordered_json body;
};

/// In-memory registry of live annotation sessions.
///
/// Each session is guarded by its own mutex; a label submission that arrives
/// while the same session is computing gets 409. Reads return the snapshot
/// taken after the last completed transition and never block on computation.
/// True labels present in dataset files never appear in any response.
class SessionService {
 public:
  /// With `snapshot_dir`, every session writes `<dir>/<id>.json` after each
  /// transition and `restore_snapshots` can replay them after a restart.
  explicit SessionService(std::optional<std::filesystem::path> snapshot_dir = std::nullopt);
  ~SessionService();

  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  /// Body: {dataset_path, theta?, batch_size?, m?, knn?, budget?, max_rounds?,
  /// strategy?, seed?}.
  ServiceResponse create(const nlohmann::json& body);
  ServiceResponse get(const std::string& id) const;
  /// Body: {labels: [{id, true_label}, ...]} covering exactly the pending batch.
  ServiceResponse submit_labels(const std::string& id, const nlohmann::json& body);
  ServiceResponse remove(const std::string& id);

  std::size_t size() const;
  /// Replays every snapshot in the snapshot directory; returns how many
  /// sessions were restored.
  std::size_t restore_snapshots();

 private:
  struct Entry;

  std::shared_ptr<Entry> find(const std::string& id) const;
  std::string next_id();

  std::optional<std::filesystem::path> snapshot_dir_;
  mutable std::mutex registry_mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_ = 0;
};

/// Registers the JSON routes on `server`:
///   POST   /sessions
///   GET    /sessions/{id}
///   POST   /sessions/{id}/labels
///   DELETE /sessions/{id}
void register_routes(httplib::Server& server, SessionService& service);

/// Resolves the listening port: explicit flag first, then the
/// FAILURE_SCOUT_PORT environment variable, then `fallback`.
int resolve_port(std::optional<int> flag, int fallback = 8080);

}  // namespace failure_scout
