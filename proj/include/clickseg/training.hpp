// SPDX-License-Identifier: Apache-2.0
//
// Click pre-caching, the optimization loop, and the finite-difference
// gradient check of the complete network.
#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "clickseg/model.hpp"
#include "clickseg/sampling.hpp"

namespace clickseg {

/// Candidate clicks per scene, keyed by scene id and sampler seed.
struct ClickCache {
  std::uint64_t seed = 0;
  std::vector<std::string> scene_ids;
  std::vector<ClickSet> candidates;

  const ClickSet& at(const std::string& scene_id) const;  // throws "missing scene"
  nlohmann::json to_json() const;
  static ClickCache from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static ClickCache load(const std::filesystem::path& path);
};

ClickCache precache_clicks(const std::vector<SceneData>& scenes, const SamplerConfig& cfg);

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  int steps = 500;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;  // SGD
  double beta1 = 0.9;     // Adam
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global gradient norm; 0 disables
  SamplerConfig sampler;
  std::uint64_t seed = 0;
  bool fixed_clicks = false;  // reuse one click subset per scene (debugging)
  int checkpoint_every = 0;   // 0 = only final and best
  int smoothing_window = 50;  // for best-checkpoint selection
  int log_every = 0;          // 0 = silent
  std::filesystem::path out_dir;  // empty = no files written

  void validate() const;
};

struct LossRecord {
  int step = 0;
  double total = 0, bce = 0, dice = 0, ce = 0;
};

struct TrainResult {
  std::vector<LossRecord> curve;
  int best_step = -1;
  double best_smoothed = 0.0;
};

std::string loss_curve_csv(const std::vector<LossRecord>& curve);

/// Optimizes `model` in place, one scene per step. Writes loss_curve.csv,
/// final.ckpt and best.ckpt into cfg.out_dir when it is set. A non-finite
/// loss stops training with a diagnostic dump and an Error.
TrainResult train(Model<float>& model, const std::vector<SceneData>& scenes,
                  const ClickCache& cache, const TrainConfig& cfg, std::ostream* log = nullptr);

struct GradCheckGroup {
  std::string name;
  std::size_t checked = 0;  // coordinates compared
  std::size_t skipped = 0;  // coordinates whose perturbation flipped a discrete decision
  double rel_error = 0.0;   // |a - f| / max(|a|, |f|, floor) over the checked coordinates
  bool pass = false;
};

struct GradCheckReport {
  double tolerance = 1e-4;
  std::vector<GradCheckGroup> groups;

  bool pass() const;
  double max_rel_error() const;
  std::string to_table() const;
  nlohmann::json to_json() const;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  std::size_t coords_per_group = 8;
  /// Absolute floor of the relative-error denominator, scaled by max(1, |loss|).
  /// Rounding noise of the central difference is about 1e-10 at h = 1e-5, so
  /// groups whose exact gradient is zero are not judged on that noise alone.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
  /// Runs after the analytic backward pass (e.g. to corrupt a gradient).
  std::function<void(ParamStore<double>&)> post_backward;
};

/// Central differences against the analytic gradient for every parameter
/// tensor. Coordinates whose perturbation changes a discrete decision (mask
/// binarization, class arg-max, probability clamp) are resampled.
GradCheckReport grad_check(Model<double>& model, const PreparedScene& scene,
                           const ClickSet& clicks, const SupervisionTargets& targets,
                           const GradCheckOptions& opts = {});

}  // namespace clickseg
