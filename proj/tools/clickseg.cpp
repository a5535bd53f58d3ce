// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: data generation, click caching, training,
// evaluation, inference, the HTTP service and the gradient check.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "clickseg/evaluation.hpp"
#include "clickseg/scene_io.hpp"
#include "clickseg/service.hpp"
#include "clickseg/simd.hpp"
#include "clickseg/synthdata.hpp"
#include "clickseg/training.hpp"

namespace fs = std::filesystem;
using namespace clickseg;

namespace {

std::vector<SceneData> load_scene_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("scene directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SceneData> scenes;
  for (const auto& f : files) {
    scenes.push_back(load_scene(f));
    if (scenes.back().cloud.id.empty()) scenes.back().cloud.id = f.stem().string();
  }
  if (scenes.empty()) throw Error("no scene files in " + dir.string());
  return scenes;
}

SceneData load_any_scene(const fs::path& path) {
  return path.extension() == ".ply" ? read_ascii_ply(path) : load_scene(path);
}

std::string model_dir() {
  const char* env = std::getenv("CLICKSEG_MODEL_DIR");
  return env ? env : "models";
}

/// A checkpoint path, or a model id looked up in the model directory.
fs::path resolve_model(const std::string& ref) {
  if (fs::exists(ref)) return ref;
  const fs::path p = fs::path(model_dir()) / (ref + ".ckpt");
  if (fs::exists(p)) return p;
  throw Error("model not found: " + ref + " (also tried " + p.string() + ")");
}

ModelConfig base_config(const std::string& config_file, bool small) {
  if (!config_file.empty()) return model_config_from_json(read_json_file(config_file));
  return small ? small_model_config() : ModelConfig{};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v;
    if (!(is >> v)) throw Error("invalid list entry: " + item);
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clickseg: few-click interactive 3D point cloud segmentation"};
  app.require_subcommand(1);
  std::string simd = "auto";
  app.add_option("--simd", simd, "Kernel backend: auto, scalar or avx2")
      ->check(CLI::IsMember({"auto", "scalar", "avx2"}))
      ->capture_default_str();

  // gen-scenes
  auto* gen = app.add_subcommand("gen-scenes", "Generate synthetic scenes as JSON files");
  SceneSpec spec;
  std::size_t gen_count = 10;
  std::string gen_out = "scenes";
  bool no_floor = false;
  gen->add_option("--count", gen_count, "Number of scenes")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  gen->add_option("--min-instances", spec.min_instances, "Minimum instances per scene")->capture_default_str();
  gen->add_option("--max-instances", spec.max_instances, "Maximum instances per scene")->capture_default_str();
  gen->add_option("--min-points", spec.min_points, "Minimum points per instance")->capture_default_str();
  gen->add_option("--max-points", spec.max_points, "Maximum points per instance")->capture_default_str();
  gen->add_option("--floor-points", spec.floor_points, "Floor points")->capture_default_str();
  gen->add_option("--noise", spec.noise, "Gaussian noise stddev")->capture_default_str();
  gen->add_option("--spacing", spec.spacing, "Minimum center spacing factor")->capture_default_str();
  gen->add_flag("--no-floor", no_floor, "Omit the floor");
  gen->add_flag("--wall", spec.wall, "Add a wall");

  // cache-clicks
  auto* cache_cmd = app.add_subcommand("cache-clicks", "Pre-sample candidate clicks for training");
  std::string cache_scenes = "scenes", cache_out = "clicks.json", strategy = "fps";
  SamplerConfig sampler;
  cache_cmd->add_option("--scenes", cache_scenes, "Scene directory")->capture_default_str();
  cache_cmd->add_option("--out", cache_out, "Output cache file")->capture_default_str();
  cache_cmd->add_option("--seed", sampler.seed, "Random seed")->capture_default_str();
  cache_cmd->add_option("--strategy", strategy, "fps, random or voxel")->capture_default_str();
  cache_cmd->add_option("--per-instance-min", sampler.per_instance_min, "Minimum candidates per instance")->capture_default_str();
  cache_cmd->add_option("--per-instance-max", sampler.per_instance_max, "Maximum candidates per instance")->capture_default_str();

  // init-model
  auto* init = app.add_subcommand("init-model", "Write a randomly initialized checkpoint");
  std::string init_out = "model.ckpt", init_config;
  bool init_small = false;
  std::uint64_t init_seed = 1;
  init->add_option("--out", init_out, "Checkpoint path")->capture_default_str();
  init->add_option("--config", init_config, "Model config JSON");
  init->add_flag("--small", init_small, "Use the reduced test configuration");
  init->add_option("--seed", init_seed, "Initialization seed")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model on scenes with cached clicks");
  std::string train_scenes = "scenes", train_cache = "clicks.json", train_out = "run", train_config, optimizer = "adam";
  std::string resume;
  bool train_small = false;
  TrainConfig tcfg;
  tcfg.log_every = 50;
  train_cmd->add_option("--scenes", train_scenes, "Scene directory")->capture_default_str();
  train_cmd->add_option("--cache", train_cache, "Click cache file")->capture_default_str();
  train_cmd->add_option("--out", train_out, "Output directory")->capture_default_str();
  train_cmd->add_option("--config", train_config, "Model config JSON");
  train_cmd->add_option("--resume", resume, "Start from this checkpoint");
  train_cmd->add_flag("--small", train_small, "Use the reduced test configuration");
  train_cmd->add_option("--steps", tcfg.steps, "Optimization steps")->capture_default_str();
  train_cmd->add_option("--lr", tcfg.lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--optimizer", optimizer, "adam or sgd")->capture_default_str();
  train_cmd->add_option("--momentum", tcfg.momentum, "SGD momentum")->capture_default_str();
  train_cmd->add_option("--grad-clip", tcfg.grad_clip, "Global gradient-norm clip (0 = off)")->capture_default_str();
  train_cmd->add_option("--seed", tcfg.seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--checkpoint-every", tcfg.checkpoint_every, "Extra checkpoint cadence (0 = off)")->capture_default_str();
  train_cmd->add_option("--log-every", tcfg.log_every, "Progress cadence (0 = silent)")->capture_default_str();
  train_cmd->add_flag("--fixed-clicks", tcfg.fixed_clicks, "Reuse one click subset per scene");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model with the simulated-user protocol");
  std::string eval_scenes = "scenes", eval_model, eval_out = "eval", schedule = "1,3,5,7,10", noc_targets = "0.8,0.85,0.9";
  EvalProtocol protocol;
  std::size_t eval_limit = 0;
  eval_cmd->add_option("--scenes", eval_scenes, "Scene directory")->capture_default_str();
  eval_cmd->add_option("--model", eval_model, "Checkpoint path or model id")->required();
  eval_cmd->add_option("--out", eval_out, "Output directory")->capture_default_str();
  eval_cmd->add_option("--schedule", schedule, "Clicks per instance")->capture_default_str();
  eval_cmd->add_option("--noc-targets", noc_targets, "NoC IoU targets")->capture_default_str();
  eval_cmd->add_option("--max-clicks", protocol.max_clicks, "NoC click cap")->capture_default_str();
  eval_cmd->add_option("--limit", eval_limit, "Evaluate at most this many scenes (0 = all)")->capture_default_str();
  eval_cmd->add_flag("--components", protocol.connected_components, "Corrective clicks target the largest error component");

  // infer
  auto* infer = app.add_subcommand("infer", "Segment one scene from a click file");
  std::string infer_scene, infer_clicks, infer_model, infer_out = "result.json";
  infer->add_option("--scene", infer_scene, "Scene JSON or ASCII PLY")->required();
  infer->add_option("--clicks", infer_clicks, "Click JSON")->required();
  infer->add_option("--model", infer_model, "Checkpoint path or model id")->required();
  infer->add_option("--out", infer_out, "Result JSON")->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
  std::string host = "127.0.0.1", serve_models, scene_dir, log_dir;
  int port = 8080;
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port")->capture_default_str();
  serve->add_option("--models", serve_models, "Model directory (default: $CLICKSEG_MODEL_DIR or ./models)");
  serve->add_option("--scene-dir", scene_dir, "Directory of scenes addressable by id");
  serve->add_option("--log-dir", log_dir, "Write click logs here");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  std::size_t gc_points = 64, gc_clicks = 4, gc_stages = 2;
  GradCheckOptions gopts;
  bool gc_small = false;
  std::string gc_out;
  gc->add_option("--points", gc_points, "Scene points")->capture_default_str();
  gc->add_option("--clicks", gc_clicks, "Clicks")->capture_default_str();
  gc->add_option("--stages", gc_stages, "Decoder stages")->capture_default_str();
  gc->add_option("--tolerance", gopts.tolerance, "Relative error tolerance")->capture_default_str();
  gc->add_option("--step", gopts.h, "Finite-difference step")->capture_default_str();
  gc->add_option("--coords", gopts.coords_per_group, "Coordinates per parameter tensor")->capture_default_str();
  gc->add_option("--seed", gopts.seed, "Random seed")->capture_default_str();
  gc->add_flag("--small", gc_small, "Use the reduced configuration");
  gc->add_option("--out", gc_out, "Write the report as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simd == "scalar") simd::set_backend(simd::Backend::scalar);
    if (simd == "avx2") {
      if (!simd::avx2_available()) throw Error("AVX2 is not available on this CPU");
      simd::set_backend(simd::Backend::avx2);
    }

    if (*gen) {
      spec.floor = !no_floor;
      fs::create_directories(gen_out);
      const auto scenes = generate_scenes(spec, gen_count);
      for (const auto& s : scenes) save_scene(s, fs::path(gen_out) / (s.cloud.id + ".json"));
      std::cout << "wrote " << scenes.size() << " scenes to " << gen_out << "\n";
    } else if (*cache_cmd) {
      sampler.strategy = parse_strategy(strategy);
      const auto scenes = load_scene_dir(cache_scenes);
      const ClickCache cache = precache_clicks(scenes, sampler);
      cache.save(cache_out);
      std::size_t total = 0;
      for (const auto& c : cache.candidates) total += c.size();
      std::cout << "cached " << total << " candidate clicks for " << scenes.size() << " scenes in "
                << cache_out << "\n";
    } else if (*init) {
      ModelConfig cfg = base_config(init_config, init_small);
      cfg.seed = init_seed;
      const Model<float> model(cfg);
      if (fs::path(init_out).has_parent_path()) fs::create_directories(fs::path(init_out).parent_path());
      model.save(init_out);
      std::cout << "wrote " << init_out << " (" << model.params().scalar_count() << " parameters)\n";
    } else if (*train_cmd) {
      if (optimizer != "adam" && optimizer != "sgd") throw Error("optimizer must be adam or sgd");
      tcfg.optimizer = optimizer == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
      tcfg.out_dir = train_out;
      const auto scenes = load_scene_dir(train_scenes);
      const ClickCache cache = ClickCache::load(train_cache);
      Model<float> model = resume.empty() ? Model<float>(base_config(train_config, train_small))
                                          : Model<float>::load(resolve_model(resume));
      const auto t0 = std::chrono::steady_clock::now();
      const TrainResult r = train(model, scenes, cache, tcfg, &std::cout);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "trained " << tcfg.steps << " steps in " << secs << " s; first loss "
                << r.curve.front().total << ", last loss " << r.curve.back().total << "; outputs in "
                << train_out << "\n";
    } else if (*eval_cmd) {
      protocol.schedule = parse_list<int>(schedule);
      protocol.noc_targets = parse_list<double>(noc_targets);
      auto scenes = load_scene_dir(eval_scenes);
      if (eval_limit > 0 && scenes.size() > eval_limit) scenes.resize(eval_limit);
      const Model<float> model = Model<float>::load(resolve_model(eval_model));
      const MetricsReport rep = evaluate(
          scenes,
          [&](const SceneData& s) -> Segmenter {
            auto prepared = std::make_shared<PreparedScene>(prepare_scene(s.cloud, model.config()));
            return [prepared, &model](const ClickSet& c) { return segment(*prepared, c, model); };
          },
          protocol);
      fs::create_directories(eval_out);
      write_json_file(rep.to_json(), fs::path(eval_out) / "report.json");
      write_text(fs::path(eval_out) / "report.txt", rep.to_table());
      write_text(fs::path(eval_out) / "miou_vs_clicks.csv", rep.plot_csv());
      std::cout << rep.to_table();
    } else if (*infer) {
      const SceneData scene = load_any_scene(infer_scene);
      const ClickSet clicks = load_clicks(infer_clicks);
      const Model<float> model = Model<float>::load(resolve_model(infer_model));
      const SegmentationResult r = segment(scene.cloud, snap_clicks(scene.cloud, clicks), model);
      write_json_file(result_to_json(r), infer_out);
      std::size_t labelled = 0;
      for (int v : r.point_instance) labelled += v >= 0;
      std::cout << "segmented " << r.point_instance.size() << " points (" << labelled
                << " labelled, " << r.groups.size() << " groups) -> " << infer_out << "\n";
    } else if (*serve) {
      ModelRegistry models;
      const std::string dir = serve_models.empty() ? model_dir() : serve_models;
      const std::size_t n = models.load_directory(dir);
      SessionManager sessions(models, log_dir);
      HttpService http(sessions, models, scene_dir);
      std::cout << "loaded " << n << " models from " << dir << "; listening on " << host << ":" << port
                << std::endl;
      if (!http.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
    } else if (*gc) {
      ModelConfig cfg = gc_small ? small_model_config() : ModelConfig{};
      cfg.decoder.stages = gc_stages;
      const Model<double> proto(cfg);
      Model<double> model = proto;
      SceneSpec s;
      s.min_instances = s.max_instances = static_cast<int>(std::max<std::size_t>(gc_clicks, 1));
      s.min_points = s.max_points = static_cast<int>(gc_points / std::max<std::size_t>(gc_clicks, 1));
      s.floor = false;
      s.seed = gopts.seed;
      const SceneData scene = generate_scene(s);
      const PreparedScene prepared = prepare_scene(scene.cloud, cfg);
      EvalProtocol ep;
      const ClickSet clicks = initial_clicks(scene, ep);
      const SupervisionTargets targets = build_targets(scene.instance_ids, scene.class_ids, clicks);
      const auto t0 = std::chrono::steady_clock::now();
      const GradCheckReport rep = grad_check(model, prepared, clicks, targets, gopts);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << rep.to_table() << "time " << secs << " s\n";
      if (!gc_out.empty()) write_json_file(rep.to_json(), gc_out);
      return rep.pass() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
