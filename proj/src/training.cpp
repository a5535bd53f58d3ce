// SPDX-License-Identifier: Apache-2.0

#include "clickseg/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "clickseg/scene_io.hpp"

namespace clickseg {

using nlohmann::json;

const ClickSet& ClickCache::at(const std::string& scene_id) const {
  for (std::size_t i = 0; i < scene_ids.size(); ++i)
    if (scene_ids[i] == scene_id) return candidates[i];
  throw Error("missing scene in click cache: " + scene_id);
}

json ClickCache::to_json() const {
  json entries = json::array();
  for (std::size_t i = 0; i < scene_ids.size(); ++i) {
    json c = clicks_to_json(candidates[i]);
    entries.push_back({{"scene", scene_ids[i]}, {"clicks", c.at("clicks")}});
  }
  return {{"seed", seed}, {"entries", entries}};
}

ClickCache ClickCache::from_json(const json& doc) {
  ClickCache c;
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& e : doc.at("entries")) {
      c.scene_ids.push_back(e.at("scene").get<std::string>());
      c.candidates.push_back(clicks_from_json({{"clicks", e.at("clicks")}}));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed click cache: ") + e.what());
  }
  return c;
}

void ClickCache::save(const std::filesystem::path& path) const { write_json_file(to_json(), path); }
ClickCache ClickCache::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

ClickCache precache_clicks(const std::vector<SceneData>& scenes, const SamplerConfig& cfg) {
  cfg.validate();
  ClickCache cache;
  cache.seed = cfg.seed;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SceneData& s = scenes[i];
    if (!s.has_ground_truth()) throw Error("scene without ground truth: " + s.cloud.id);
    if (!seen.insert(s.cloud.id).second) throw Error("duplicate scene id: " + s.cloud.id);
    SamplerConfig sc = cfg;
    sc.seed = mix_seed(cfg.seed, std::hash<std::string>{}(s.cloud.id));
    cache.scene_ids.push_back(s.cloud.id);
    cache.candidates.push_back(sample_click_candidates(s.cloud, s.instance_ids, sc));
  }
  return cache;
}

void TrainConfig::validate() const {
  if (steps < 1) throw Error("steps must be >= 1");
  if (!(lr >= 0) || !std::isfinite(lr)) throw Error("learning rate must be finite and non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw Error("momentum must lie in [0, 1)");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw Error("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw Error("Adam epsilon must be positive");
  if (!(grad_clip >= 0)) throw Error("gradient clip must be non-negative");
  if (smoothing_window < 1) throw Error("smoothing window must be >= 1");
  if (checkpoint_every < 0 || log_every < 0) throw Error("cadences must be non-negative");
  sampler.validate();
}

std::string loss_curve_csv(const std::vector<LossRecord>& curve) {
  std::ostringstream os;
  os << "step,total,bce,dice,ce\n" << std::setprecision(9);
  for (const auto& r : curve)
    os << r.step << ',' << r.total << ',' << r.bce << ',' << r.dice << ',' << r.ce << '\n';
  return os.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

[[noreturn]] void abort_non_finite(const TrainConfig& cfg, int step, const SceneData& scene,
                                   const ClickSet& clicks, const LossBreakdown& loss,
                                   const ParamStore<float>& params) {
  json bad = json::array();
  for (const auto& p : params.params()) {
    bool finite_v = true, finite_g = true;
    for (float v : p.value.storage()) finite_v = finite_v && std::isfinite(v);
    for (float v : p.grad.storage()) finite_g = finite_g && std::isfinite(v);
    if (!finite_v || !finite_g) bad.push_back({{"name", p.name}, {"value_finite", finite_v}, {"grad_finite", finite_g}});
  }
  json dump = {{"step", step},
               {"scene", scene.cloud.id},
               {"clicks", clicks_to_json(clicks).at("clicks")},
               {"bce", loss.bce},
               {"dice", loss.dice},
               {"ce", loss.ce},
               {"non_finite_parameters", bad}};
  std::string where;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const auto path = cfg.out_dir / "diagnostic.json";
    write_json_file(dump, path);
    where = " (diagnostics in " + path.string() + ")";
  }
  throw Error("non-finite loss at step " + std::to_string(step) + where);
}

}  // namespace

TrainResult train(Model<float>& model, const std::vector<SceneData>& scenes,
                  const ClickCache& cache, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (scenes.empty()) throw Error("no training scenes");
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  std::vector<PreparedScene> prepared;
  std::vector<const ClickSet*> candidates;
  prepared.reserve(scenes.size());
  for (const auto& s : scenes) {
    if (!s.has_ground_truth()) throw Error("scene without ground truth: " + s.cloud.id);
    prepared.push_back(prepare_scene(s.cloud, model.config()));
    candidates.push_back(&cache.at(s.cloud.id));
    if (prepared.back().reduced()) throw Error("training scenes must fit within max_points");
  }

  ParamStore<float>& params = model.params();
  std::vector<std::vector<float>> m1(params.size()), m2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m1[i].assign(params[i].value.size(), 0.0f);
    if (cfg.optimizer == OptimizerKind::adam) m2[i].assign(params[i].value.size(), 0.0f);
  }

  TrainResult res;
  ParamStore<float> best = params;
  double window_sum = 0.0;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7a1));
  std::uniform_int_distribution<std::size_t> pick(0, scenes.size() - 1);
  for (int step = 0; step < cfg.steps; ++step) {
    const std::size_t si = scenes.size() == 1 ? 0 : pick(rng);
    const std::uint64_t click_seed =
        cfg.fixed_clicks ? mix_seed(cfg.seed, si) : mix_seed(cfg.seed, 1000003ull * static_cast<std::uint64_t>(step) + si);
    ClickSet clicks = training_subset(*candidates[si], cfg.sampler, click_seed);
    const SupervisionTargets targets =
        build_targets(scenes[si].instance_ids, scenes[si].class_ids, clicks);

    params.zero_grad();
    const LossBreakdown loss = model.loss_and_grad(prepared[si], clicks, targets);
    if (!std::isfinite(loss.total)) abort_non_finite(cfg, step, scenes[si], clicks, loss, params);

    double norm2 = 0.0;
    for (const auto& p : params.params())
      for (float g : p.grad.storage()) norm2 += static_cast<double>(g) * g;
    if (!std::isfinite(norm2)) abort_non_finite(cfg, step, scenes[si], clicks, loss, params);
    const double norm = std::sqrt(norm2);
    const float clip = cfg.grad_clip > 0 && norm > cfg.grad_clip ? static_cast<float>(cfg.grad_clip / norm) : 1.0f;

    const float lr = static_cast<float>(cfg.lr);
    if (cfg.optimizer == OptimizerKind::adam) {
      const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
      const double t = step + 1;
      const auto c1 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
      const auto c2 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
      const auto eps = static_cast<float>(cfg.adam_eps);
      for (std::size_t i = 0; i < params.size(); ++i) {
        float* w = params[i].value.data();
        const float* g = params[i].grad.data();
        for (std::size_t j = 0; j < params[i].value.size(); ++j) {
          const float gj = g[j] * clip;
          m1[i][j] = b1 * m1[i][j] + (1 - b1) * gj;
          m2[i][j] = b2 * m2[i][j] + (1 - b2) * gj * gj;
          w[j] -= lr * (m1[i][j] * c1) / (std::sqrt(m2[i][j] * c2) + eps);
        }
      }
    } else {
      const auto mu = static_cast<float>(cfg.momentum);
      for (std::size_t i = 0; i < params.size(); ++i) {
        float* w = params[i].value.data();
        const float* g = params[i].grad.data();
        for (std::size_t j = 0; j < params[i].value.size(); ++j) {
          m1[i][j] = mu * m1[i][j] + g[j] * clip;
          w[j] -= lr * m1[i][j];
        }
      }
    }

    res.curve.push_back({step, loss.total, loss.mean_bce(), loss.mean_dice(), loss.mean_ce()});
    // Best checkpoint: lowest moving average of the loss over the window. The
    // parameters saved are those after the last step of the window.
    window_sum += loss.total;
    if (step >= cfg.smoothing_window) window_sum -= res.curve[static_cast<std::size_t>(step - cfg.smoothing_window)].total;
    const int filled = std::min(step + 1, cfg.smoothing_window);
    const double smoothed = window_sum / filled;
    if (step + 1 >= cfg.smoothing_window || step + 1 == cfg.steps) {
      if (res.best_step < 0 || smoothed < res.best_smoothed) {
        res.best_step = step;
        res.best_smoothed = smoothed;
        best = params;
      }
    }
    if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      *log << "step " << step << " loss " << loss.total << " (bce " << loss.mean_bce() << ", dice "
           << loss.mean_dice() << ", ce " << loss.mean_ce() << ") avg " << smoothed << std::endl;
    }
    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      model.save(cfg.out_dir / ("step-" + std::to_string(step + 1) + ".ckpt"));
  }

  if (!cfg.out_dir.empty()) {
    write_text(cfg.out_dir / "loss_curve.csv", loss_curve_csv(res.curve));
    model.save(cfg.out_dir / "final.ckpt");
    Model<float> best_model = model;
    best_model.params() = best;
    best_model.save(cfg.out_dir / "best.ckpt");
  }
  return res;
}

bool GradCheckReport::pass() const {
  for (const auto& g : groups)
    if (!g.pass) return false;
  return !groups.empty();
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.rel_error);
  return m;
}

std::string GradCheckReport::to_table() const {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3);
  for (const auto& g : groups)
    os << (g.pass ? "ok   " : "FAIL ") << std::left << std::setw(36) << g.name << " rel " << g.rel_error
       << "  checked " << g.checked << "  skipped " << g.skipped << '\n';
  os << (pass() ? "PASS" : "FAIL") << " max relative error " << max_rel_error() << " (tolerance "
     << tolerance << ")\n";
  return os.str();
}

json GradCheckReport::to_json() const {
  json gs = json::array();
  for (const auto& g : groups)
    gs.push_back({{"name", g.name}, {"rel_error", g.rel_error}, {"checked", g.checked},
                  {"skipped", g.skipped}, {"pass", g.pass}});
  return {{"tolerance", tolerance}, {"pass", pass()}, {"max_rel_error", max_rel_error()}, {"groups", gs}};
}

namespace {

/// Discrete decisions taken by a forward pass: mask binarization, class
/// arg-max per stage, and which probabilities hit the BCE clamp.
std::vector<std::uint8_t> decisions(const std::vector<StageOutput<double>>& stages) {
  std::vector<std::uint8_t> out;
  for (const auto& s : stages) {
    for (double m : s.mask_logits.storage()) {
      out.push_back(m >= 0.0);
      const double p = 1.0 / (1.0 + std::exp(-m));
      out.push_back(p <= 1e-7 || p >= 1.0 - 1e-7);
    }
    for (std::size_t q = 0; q < s.class_logits.cols(); ++q) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < s.class_logits.rows(); ++c)
        if (s.class_logits(c, q) > s.class_logits(best, q)) best = c;
      out.push_back(static_cast<std::uint8_t>(best));
    }
  }
  return out;
}

}  // namespace

GradCheckReport grad_check(Model<double>& model, const PreparedScene& scene, const ClickSet& clicks,
                           const SupervisionTargets& targets, const GradCheckOptions& opts) {
  if (!(opts.h > 0)) throw Error("finite-difference step must be positive");
  GradCheckReport rep;
  rep.tolerance = opts.tolerance;
  ParamStore<double>& params = model.params();
  params.zero_grad();
  const double loss0 = model.loss_and_grad(scene, clicks, targets).total;
  const double floor = opts.abs_floor * std::max(1.0, std::abs(loss0));
  if (opts.post_backward) opts.post_backward(params);

  const auto base = decisions(model.forward(scene, clicks));
  auto eval = [&](std::vector<std::uint8_t>& sig) {
    const auto stages = model.forward(scene, clicks);
    sig = decisions(stages);
    return total_loss(stages, targets, model.config().loss).total;
  };

  std::mt19937_64 rng(opts.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    GradCheckGroup g;
    g.name = p.name;
    const std::size_t size = p.value.size();
    std::vector<std::size_t> order(size);
    for (std::size_t i = 0; i < size; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    // Always include the coordinate with the largest analytic gradient.
    std::size_t largest = 0;
    for (std::size_t i = 1; i < size; ++i)
      if (std::abs(p.grad.data()[i]) > std::abs(p.grad.data()[largest])) largest = i;
    std::iter_swap(order.begin(), std::find(order.begin(), order.end(), largest));

    double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
    std::vector<std::uint8_t> sp, sm;
    for (std::size_t idx : order) {
      if (g.checked >= opts.coords_per_group) break;
      double& w = p.value.data()[idx];
      const double w0 = w;
      w = w0 + opts.h;
      const double fp = eval(sp);
      w = w0 - opts.h;
      const double fm = eval(sm);
      w = w0;
      if (sp != base || sm != base) {
        ++g.skipped;
        continue;
      }
      const double fd = (fp - fm) / (2 * opts.h);
      const double an = p.grad.data()[idx];
      diff2 += (an - fd) * (an - fd);
      a2 += an * an;
      f2 += fd * fd;
      ++g.checked;
    }
    const double denom = std::max(std::sqrt(std::max(a2, f2)), floor);
    g.rel_error = std::sqrt(diff2) / denom;
    g.pass = g.checked > 0 && g.rel_error <= opts.tolerance;
    rep.groups.push_back(std::move(g));
  }
  return rep;
}

}  // namespace clickseg
