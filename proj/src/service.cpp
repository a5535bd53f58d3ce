// SPDX-License-Identifier: Apache-2.0

#include "clickseg/service.hpp"

#include <algorithm>
#include <fstream>

#include "clickseg/scene_io.hpp"
#include "httplib.h"

namespace clickseg {

using nlohmann::json;

void ModelRegistry::add(const std::string& id, std::shared_ptr<const Model<float>> model) {
  if (id.empty()) throw Error("model id must not be empty");
  if (!model) throw Error("null model");
  std::lock_guard lock(mu_);
  models_[id] = std::move(model);
}

std::shared_ptr<const Model<float>> ModelRegistry::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = models_.find(id);
  if (it == models_.end()) throw NotFound("unknown model: " + id);
  return it->second;
}

std::vector<std::string> ModelRegistry::ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [k, v] : models_) out.push_back(k);
  return out;
}

std::size_t ModelRegistry::load_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("model directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ckpt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    add(f.stem().string(), std::make_shared<const Model<float>>(Model<float>::load(f)));
  return files.size();
}

json mutation_to_json(const ClickMutation& m) {
  return {{"add", clicks_to_json(ClickSet{m.add}).at("clicks")}, {"remove", m.remove}};
}

ClickMutation mutation_from_json(const json& doc) {
  if (!doc.is_object()) throw Error("mutation must be an object");
  ClickMutation m;
  try {
    if (doc.contains("add")) m.add = clicks_from_json({{"clicks", doc.at("add")}}).clicks;
    if (doc.contains("remove")) m.remove = doc.at("remove").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw Error(std::string("malformed mutation: ") + e.what());
  }
  return m;
}

json state_to_json(const SessionState& s) {
  return {{"revision", s.revision},
          {"clicks", clicks_to_json(s.clicks).at("clicks")},
          {"result", s.result ? result_to_json(*s.result) : json(nullptr)}};
}

struct SessionManager::Session {
  std::string id;
  SceneData scene;
  std::shared_ptr<const Model<float>> model;
  PreparedScene prepared;
  std::unique_ptr<SpatialIndex> index;  // full-resolution, for snapping
  std::filesystem::path log_file;

  mutable std::mutex mu;
  mutable std::condition_variable cv;
  SessionState st;
  std::vector<ClickMutation> log;
};

namespace {

/// Applies one mutation and runs the forward pass when clicks remain.
void apply_mutation(SessionState& st, const ClickMutation& m, const SpatialIndex& index,
                    const PreparedScene& prepared, const Model<float>& model) {
  std::vector<int> rm = m.remove;
  std::sort(rm.begin(), rm.end());
  rm.erase(std::unique(rm.begin(), rm.end()), rm.end());
  for (int r : rm)
    if (r < 0 || static_cast<std::size_t>(r) >= st.clicks.size())
      throw Error("click index out of range: " + std::to_string(r));
  ClickSet next = st.clicks;
  for (auto it = rm.rbegin(); it != rm.rend(); ++it) next.clicks.erase(next.clicks.begin() + *it);
  const ClickSet added = snap_clicks(index, ClickSet{m.add});
  next.clicks.insert(next.clicks.end(), added.clicks.begin(), added.clicks.end());
  std::optional<SegmentationResult> result;
  if (!next.empty()) result = segment(prepared, next, model);
  st.clicks = std::move(next);
  st.result = std::move(result);
  ++st.revision;
}

}  // namespace

SessionManager::SessionManager(const ModelRegistry& models, std::filesystem::path log_dir)
    : models_(models), log_dir_(std::move(log_dir)) {
  if (!log_dir_.empty()) std::filesystem::create_directories(log_dir_);
}

std::string SessionManager::create_session(const SceneData& scene, const std::string& model_id) {
  auto model = models_.get(model_id);
  scene.validate();
  auto s = std::make_shared<Session>();
  s->scene = scene;
  s->model = model;
  s->prepared = prepare_scene(scene.cloud, model->config());
  s->index = std::make_unique<SpatialIndex>(scene.cloud);
  {
    std::lock_guard lock(mu_);
    s->id = "s" + std::to_string(next_id_++);
    sessions_[s->id] = s;
  }
  if (!log_dir_.empty()) {
    s->log_file = log_dir_ / (s->id + ".jsonl");
    std::ofstream(s->log_file, std::ios::trunc);
  }
  return s->id;
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown session: " + id);
  return it->second;
}

SessionState SessionManager::apply_clicks(const std::string& id, const ClickMutation& m) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  apply_mutation(s->st, m, *s->index, s->prepared, *s->model);
  s->log.push_back(m);
  if (!s->log_file.empty()) {
    std::ofstream out(s->log_file, std::ios::app);
    out << mutation_to_json(m).dump() << '\n';
  }
  s->cv.notify_all();
  return s->st;
}

SessionState SessionManager::state(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return s->st;
}

SceneData SessionManager::scene(const std::string& id) const { return find(id)->scene; }

std::vector<ClickMutation> SessionManager::log(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return s->log;
}

SessionState SessionManager::wait_for_revision(const std::string& id, std::uint64_t after,
                                               std::chrono::milliseconds timeout) const {
  auto s = find(id);
  std::unique_lock lock(s->mu);
  s->cv.wait_for(lock, timeout, [&] { return s->st.revision > after; });
  return s->st;
}

SessionState SessionManager::replay(const SceneData& scene, const Model<float>& model,
                                    const std::vector<ClickMutation>& log) {
  const PreparedScene prepared = prepare_scene(scene.cloud, model.config());
  const SpatialIndex index(scene.cloud);
  SessionState st;
  for (const auto& m : log) apply_mutation(st, m, index, prepared, model);
  return st;
}

HttpService::HttpService(SessionManager& sessions, const ModelRegistry& models,
                         std::filesystem::path scene_dir)
    : sessions_(sessions),
      models_(models),
      scene_dir_(std::move(scene_dir)),
      server_(std::make_unique<httplib::Server>()) {
  routes();
}

HttpService::~HttpService() { stop(); }

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& msg) {
  reply(res, status, {{"error", msg}});
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw Error(std::string("request body is not valid JSON: ") + e.what());
  }
}

/// Runs a handler, mapping library errors onto HTTP status codes.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const NotFound& e) {
    reply_error(res, 404, e.what());
  } catch (const Error& e) {
    reply_error(res, 400, e.what());
  } catch (const std::exception& e) {
    reply_error(res, 500, e.what());
  }
}

}  // namespace

void HttpService::routes() {
  auto& srv = *server_;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/models", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"models", models_.ids()}});
  });

  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.is_object()) throw Error("request body must be an object");
      const std::string model = body.value("model", std::string("default"));
      SceneData scene;
      if (body.contains("scene")) {
        scene = scene_from_json(body.at("scene"));
      } else if (body.contains("scene_id")) {
        if (scene_dir_.empty()) throw Error("no scene directory configured");
        const std::string sid = body.at("scene_id").get<std::string>();
        if (sid.find('/') != std::string::npos || sid.find("..") != std::string::npos)
          throw Error("invalid scene id");
        const auto path = scene_dir_ / (sid + ".json");
        if (!std::filesystem::exists(path)) throw NotFound("unknown scene: " + sid);
        scene = load_scene(path);
      } else {
        throw Error("request needs 'scene' or 'scene_id'");
      }
      const std::string id = sessions_.create_session(scene, model);
      reply(res, 201, {{"session", id}, {"revision", 0}});
    });
  });

  srv.Post(R"(/sessions/([^/]+)/clicks)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const ClickMutation m = mutation_from_json(parse_body(req));
      reply(res, 200, state_to_json(sessions_.apply_clicks(req.matches[1], m)));
    });
  });

  srv.Get(R"(/sessions/([^/]+)/result)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, state_to_json(sessions_.state(req.matches[1]))); });
  });

  srv.Get(R"(/sessions/([^/]+)/scene)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, scene_to_json(sessions_.scene(req.matches[1]))); });
  });

  srv.Get(R"(/sessions/([^/]+)/log)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json log = json::array();
      for (const auto& m : sessions_.log(req.matches[1])) log.push_back(mutation_to_json(m));
      reply(res, 200, {{"log", log}});
    });
  });

  // Long-poll push channel: returns once the revision exceeds `after`.
  srv.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::uint64_t after = 0;
      int timeout_ms = 25000;
      try {
        if (req.has_param("after")) after = std::stoull(req.get_param_value("after"));
        if (req.has_param("timeout_ms")) timeout_ms = std::stoi(req.get_param_value("timeout_ms"));
      } catch (const std::exception&) {
        throw Error("invalid query parameter");
      }
      const auto st = sessions_.wait_for_revision(req.matches[1], after,
                                                  std::chrono::milliseconds(std::clamp(timeout_ms, 0, 60000)));
      reply(res, 200, state_to_json(st));
    });
  });
}

bool HttpService::listen(const std::string& host, int port) { return server_->listen(host, port); }

int HttpService::bind_any(const std::string& host) { return server_->bind_to_any_port(host); }

void HttpService::run() { server_->listen_after_bind(); }

void HttpService::stop() {
  if (server_) server_->stop();
}

}  // namespace clickseg
