// SPDX-License-Identifier: Apache-2.0
//
// Interactive sessions: each holds a scene, its click list and the latest
// result. Every mutation runs one forward pass. Sessions are serialized
// individually; models are shared read-only.
#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "clickseg/pipeline.hpp"

namespace httplib {
class Server;
}

namespace clickseg {

class ModelRegistry {
 public:
  void add(const std::string& id, std::shared_ptr<const Model<float>> model);
  std::shared_ptr<const Model<float>> get(const std::string& id) const;  // throws when unknown
  std::vector<std::string> ids() const;
  /// Registers every *.ckpt file of a directory under its stem.
  std::size_t load_directory(const std::filesystem::path& dir);

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Model<float>>> models_;
};

/// Removals (indices into the current click list) apply before additions.
struct ClickMutation {
  std::vector<Click> add;
  std::vector<int> remove;
};

nlohmann::json mutation_to_json(const ClickMutation& m);
ClickMutation mutation_from_json(const nlohmann::json& doc);

struct SessionState {
  std::uint64_t revision = 0;
  ClickSet clicks;
  std::optional<SegmentationResult> result;  // empty when there are no clicks
};

nlohmann::json state_to_json(const SessionState& s);

class NotFound : public Error {
 public:
  using Error::Error;
};

class SessionManager {
 public:
  explicit SessionManager(const ModelRegistry& models, std::filesystem::path log_dir = {});

  std::string create_session(const SceneData& scene, const std::string& model_id);
  SessionState apply_clicks(const std::string& id, const ClickMutation& mutation);
  SessionState state(const std::string& id) const;
  SceneData scene(const std::string& id) const;
  std::vector<ClickMutation> log(const std::string& id) const;

  /// Blocks until the revision exceeds `after` or the timeout expires.
  SessionState wait_for_revision(const std::string& id, std::uint64_t after,
                                 std::chrono::milliseconds timeout) const;

  /// Replays a mutation log from an empty session.
  static SessionState replay(const SceneData& scene, const Model<float>& model,
                             const std::vector<ClickMutation>& log);

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id) const;

  const ModelRegistry& models_;
  std::filesystem::path log_dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
};

/// HTTP front end over a SessionManager.
class HttpService {
 public:
  HttpService(SessionManager& sessions, const ModelRegistry& models,
              std::filesystem::path scene_dir = {});
  ~HttpService();

  /// Binds and serves until stop(); returns false when binding fails.
  bool listen(const std::string& host, int port);
  /// Binds to a free port and returns it; serve with run().
  int bind_any(const std::string& host);
  void run();
  void stop();

 private:
  void routes();

  SessionManager& sessions_;
  const ModelRegistry& models_;
  std::filesystem::path scene_dir_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace clickseg
