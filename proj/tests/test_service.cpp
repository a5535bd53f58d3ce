// SPDX-License-Identifier: Apache-2.0
//
// Session semantics and the HTTP interface the browser client drives.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "clickseg/scene_io.hpp"
#include "clickseg/service.hpp"
#include "clickseg/synthdata.hpp"
#include "httplib.h"

using namespace clickseg;
using nlohmann::json;

namespace {

SceneData small_scene(std::uint64_t seed = 3) {
  SceneSpec spec;
  spec.min_instances = spec.max_instances = 3;
  spec.min_points = 40;
  spec.max_points = 60;
  spec.floor_points = 80;
  spec.seed = seed;
  auto s = generate_scene(spec);
  s.cloud.id = "room";
  return s;
}

Click click_at(const SceneData& s, std::size_t point, int group, Vec3 offset = {0, 0, 0}) {
  const Vec3& p = s.cloud.positions[point];
  return Click{{p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]}, group, -1, -1};
}

class Sessions : public ::testing::Test {
 protected:
  void SetUp() override {
    model = std::make_shared<const Model<float>>(small_model_config());
    models.add("default", model);
  }

  std::shared_ptr<const Model<float>> model;
  ModelRegistry models;
  SceneData scene = small_scene();
};

}  // namespace

TEST_F(Sessions, CreateGivesDistinctIdsAtRevisionZero) {
  SessionManager mgr(models);
  const auto a = mgr.create_session(scene, "default");
  const auto b = mgr.create_session(scene, "default");
  EXPECT_NE(a, b);
  const auto st = mgr.state(a);
  EXPECT_EQ(st.revision, 0u);
  EXPECT_TRUE(st.clicks.empty());
  EXPECT_FALSE(st.result.has_value());
  EXPECT_THROW(mgr.create_session(scene, "missing"), NotFound);
  EXPECT_THROW(mgr.state("nope"), NotFound);
  SceneData bad = scene;
  bad.instance_ids.pop_back();
  EXPECT_THROW(mgr.create_session(bad, "default"), Error);
}

TEST_F(Sessions, ClicksAreSnappedAndSegmented) {
  SessionManager mgr(models);
  const auto id = mgr.create_session(scene, "default");
  const auto st = mgr.apply_clicks(id, {{click_at(scene, 10, 0, {1e-4, 0, 0})}, {}});
  EXPECT_EQ(st.revision, 1u);
  ASSERT_EQ(st.clicks.size(), 1u);
  EXPECT_EQ(st.clicks.clicks[0].point_index, 10);
  EXPECT_EQ(st.clicks.clicks[0].position, scene.cloud.positions[10]);
  ASSERT_TRUE(st.result.has_value());
  EXPECT_EQ(st.result->groups, std::vector<int>{0});
  EXPECT_EQ(*st.result, segment(scene.cloud, st.clicks, *model));
}

TEST_F(Sessions, RemovalsApplyBeforeAdditions) {
  SessionManager mgr(models);
  const auto id = mgr.create_session(scene, "default");
  mgr.apply_clicks(id, {{click_at(scene, 1, 0), click_at(scene, 2, 1)}, {}});
  const auto st = mgr.apply_clicks(id, {{click_at(scene, 3, 2)}, {0}});
  ASSERT_EQ(st.clicks.size(), 2u);
  EXPECT_EQ(st.clicks.clicks[0].point_index, 2);
  EXPECT_EQ(st.clicks.clicks[1].point_index, 3);
  EXPECT_THROW(mgr.apply_clicks(id, {{}, {5}}), Error);
  EXPECT_EQ(mgr.state(id).revision, 2u);
}

TEST_F(Sessions, AddThenRemoveRestoresState) {
  SessionManager mgr(models);
  const auto id = mgr.create_session(scene, "default");
  const auto before = mgr.apply_clicks(id, {{click_at(scene, 5, 0)}, {}});
  mgr.apply_clicks(id, {{click_at(scene, 70, 1)}, {}});
  const auto after = mgr.apply_clicks(id, {{}, {1}});
  EXPECT_EQ(after.revision, 3u);
  EXPECT_EQ(after.result, before.result);
  const auto empty = mgr.apply_clicks(id, {{}, {0}});
  EXPECT_TRUE(empty.clicks.empty());
  EXPECT_FALSE(empty.result.has_value());
  EXPECT_EQ(empty.revision, 4u);
}

TEST_F(Sessions, ClicksInOneGroupUnion) {
  SessionManager mgr(models);
  const auto id = mgr.create_session(scene, "default");
  const auto st =
      mgr.apply_clicks(id, {{click_at(scene, 0, 3), click_at(scene, 50, 3), click_at(scene, 100, 3)}, {}});
  ASSERT_TRUE(st.result.has_value());
  EXPECT_EQ(st.result->groups, std::vector<int>{3});
  for (int label : st.result->point_instance) EXPECT_TRUE(label == -1 || label == 3);
  // The group's mask is the union of the member queries' winning points.
  ForwardState<float> fs;
  const auto stages = model->forward(prepare_scene(scene.cloud, model->config()), st.clicks, &fs);
  const auto& m = stages.back().mask_logits;
  for (std::size_t j = 0; j < scene.cloud.size(); ++j) {
    const bool any = m(j, 0) >= 0 || m(j, 1) >= 0 || m(j, 2) >= 0;
    EXPECT_EQ(st.result->point_instance[j] == 3, any) << j;
  }
}

TEST_F(Sessions, ReplayReproducesFinalState) {
  const auto dir = std::filesystem::temp_directory_path() / "clickseg_test_service_logs";
  std::filesystem::remove_all(dir);
  SessionManager mgr(models, dir);
  const auto id = mgr.create_session(scene, "default");
  mgr.apply_clicks(id, {{click_at(scene, 1, 0), click_at(scene, 90, 1)}, {}});
  mgr.apply_clicks(id, {{click_at(scene, 150, 1)}, {0}});
  const auto final_state = mgr.apply_clicks(id, {{click_at(scene, 8, 2)}, {}});
  const auto log = mgr.log(id);
  ASSERT_EQ(log.size(), 3u);
  const auto replayed = SessionManager::replay(scene, *model, log);
  EXPECT_EQ(replayed.revision, final_state.revision);
  EXPECT_EQ(replayed.result, final_state.result);
  // The on-disk log replays identically.
  std::vector<ClickMutation> from_disk;
  std::ifstream in(dir / (id + ".jsonl"));
  for (std::string line; std::getline(in, line);) from_disk.push_back(mutation_from_json(json::parse(line)));
  EXPECT_EQ(SessionManager::replay(scene, *model, from_disk).result, final_state.result);
  std::filesystem::remove_all(dir);
}

TEST_F(Sessions, WaitForRevision) {
  SessionManager mgr(models);
  const auto id = mgr.create_session(scene, "default");
  EXPECT_EQ(mgr.wait_for_revision(id, 0, std::chrono::milliseconds(10)).revision, 0u);
  std::thread t([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    mgr.apply_clicks(id, {{click_at(scene, 4, 0)}, {}});
  });
  const auto st = mgr.wait_for_revision(id, 0, std::chrono::seconds(30));
  t.join();
  EXPECT_EQ(st.revision, 1u);
}

TEST(Registry, LookupAndDirectoryLoading) {
  ModelRegistry reg;
  EXPECT_THROW(reg.get("x"), NotFound);
  const auto dir = std::filesystem::temp_directory_path() / "clickseg_test_service_models";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  Model<float>(small_model_config()).save(dir / "tiny.ckpt");
  EXPECT_EQ(reg.load_directory(dir), 1u);
  EXPECT_EQ(reg.ids(), std::vector<std::string>{"tiny"});
  EXPECT_NE(reg.get("tiny"), nullptr);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(reg.load_directory(dir), Error);
}

TEST(MutationJson, RoundTripAndErrors) {
  ClickMutation m;
  m.add.push_back(Click{{1, 2, 3}, 4, -1, -1});
  m.remove = {0, 2};
  const auto back = mutation_from_json(json::parse(mutation_to_json(m).dump()));
  EXPECT_EQ(back.remove, m.remove);
  ASSERT_EQ(back.add.size(), 1u);
  EXPECT_EQ(back.add[0].group, 4);
  EXPECT_TRUE(mutation_from_json(json::object()).add.empty());
  EXPECT_THROW(mutation_from_json(json::array()), Error);
  EXPECT_THROW(mutation_from_json(json::parse(R"({"remove": ["a"]})")), Error);
}

class Http : public Sessions {
 protected:
  void SetUp() override {
    Sessions::SetUp();
    scene_dir = std::filesystem::temp_directory_path() / "clickseg_test_service_scenes";
    std::filesystem::remove_all(scene_dir);
    std::filesystem::create_directories(scene_dir);
    save_scene(scene, scene_dir / "room.json");
    mgr = std::make_unique<SessionManager>(models);
    service = std::make_unique<HttpService>(*mgr, models, scene_dir);
    port = service->bind_any("127.0.0.1");
    ASSERT_GT(port, 0);
    server_thread = std::thread([this] { service->run(); });
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(30, 0);
  }

  void TearDown() override {
    service->stop();
    if (server_thread.joinable()) server_thread.join();
    std::filesystem::remove_all(scene_dir);
  }

  json post(const std::string& path, const json& body, int expect) {
    auto res = client->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << res->body;
    return json::parse(res->body);
  }

  json get(const std::string& path, int expect) {
    auto res = client->Get(path);
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << res->body;
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
    return json::parse(res->body);
  }

  std::filesystem::path scene_dir;
  std::unique_ptr<SessionManager> mgr;
  std::unique_ptr<HttpService> service;
  std::unique_ptr<httplib::Client> client;
  std::thread server_thread;
  int port = 0;
};

TEST_F(Http, SessionRoundTrip) {
  EXPECT_EQ(get("/models", 200).at("models"), json::array({"default"}));

  const auto created = post("/sessions", {{"scene", scene_to_json(scene)}}, 201);
  const std::string id = created.at("session");
  EXPECT_EQ(created.at("revision"), 0);

  const auto by_id = post("/sessions", {{"scene_id", "room"}, {"model", "default"}}, 201);
  EXPECT_NE(by_id.at("session"), id);

  const auto fetched = scene_from_json(get("/sessions/" + id + "/scene", 200));
  EXPECT_EQ(fetched.cloud.positions, scene.cloud.positions);

  const ClickMutation m{{click_at(scene, 12, 0), click_at(scene, 100, 1)}, {}};
  const auto st = post("/sessions/" + id + "/clicks", mutation_to_json(m), 200);
  EXPECT_EQ(st.at("revision"), 1);
  const auto expected = mgr->state(id);
  EXPECT_EQ(result_from_json(st.at("result")), *expected.result);
  EXPECT_EQ(st.at("clicks").size(), 2u);

  EXPECT_EQ(get("/sessions/" + id + "/result", 200), st);
  EXPECT_EQ(get("/sessions/" + id + "/log", 200).at("log").size(), 1u);
  EXPECT_EQ(get("/sessions/" + id + "/events?after=0&timeout_ms=10", 200).at("revision"), 1);

  const auto cleared = post("/sessions/" + id + "/clicks", {{"remove", {0, 1}}}, 200);
  EXPECT_TRUE(cleared.at("result").is_null());
  EXPECT_EQ(cleared.at("revision"), 2);
}

TEST_F(Http, LongPollWakesOnMutation) {
  const std::string id = post("/sessions", {{"scene_id", "room"}}, 201).at("session");
  std::thread t([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    mgr->apply_clicks(id, {{click_at(scene, 3, 0)}, {}});
  });
  const auto ev = get("/sessions/" + id + "/events?after=0&timeout_ms=30000", 200);
  t.join();
  EXPECT_EQ(ev.at("revision"), 1);
  EXPECT_FALSE(ev.at("result").is_null());
}

TEST_F(Http, ErrorResponses) {
  EXPECT_TRUE(get("/sessions/zzz/result", 404).contains("error"));
  EXPECT_TRUE(post("/sessions/zzz/clicks", json::object(), 404).contains("error"));
  EXPECT_TRUE(post("/sessions", {{"scene", {{"points", json::array()}}}}, 400).contains("error"));
  EXPECT_TRUE(post("/sessions", {{"scene_id", "room"}, {"model", "nope"}}, 404).contains("error"));
  EXPECT_TRUE(post("/sessions", {{"scene_id", "../etc"}}, 400).contains("error"));
  EXPECT_TRUE(post("/sessions", {{"scene_id", "other"}}, 404).contains("error"));
  EXPECT_TRUE(post("/sessions", json::object(), 400).contains("error"));
  auto res = client->Post("/sessions", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  const std::string id = post("/sessions", {{"scene_id", "room"}}, 201).at("session");
  EXPECT_TRUE(post("/sessions/" + id + "/clicks", {{"remove", {4}}}, 400).contains("error"));
  EXPECT_TRUE(get("/sessions/" + id + "/events?after=x", 400).contains("error"));
}

TEST_F(Http, CorsPreflight) {
  auto res = client->Options("/sessions");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_NE(res->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}
