// SPDX-License-Identifier: Apache-2.0
//
// Simulated user clicks: farthest point sampling plus the random and voxel
// ablation strategies, per-instance candidate pools and random subsets.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clickseg/types.hpp"

namespace clickseg {

enum class SamplingStrategy { fps, random, voxel };

SamplingStrategy parse_strategy(const std::string& name);
std::string to_string(SamplingStrategy s);

struct Augmentation {
  double max_rotation = 6.283185307179586;  // about +z, uniform in [0, max)
  double jitter_stddev = 0.005;             // normalized units
};

struct SamplerConfig {
  SamplingStrategy strategy = SamplingStrategy::fps;
  int per_instance_min = 1;
  int per_instance_max = 15;
  int clicks_per_scene_min = 30;
  int clicks_per_scene_max = 50;
  double voxel_size = 0.1;  // normalized units, voxel strategy only
  std::uint64_t seed = 0;
  Augmentation augmentation;

  void validate() const;
};

/// splitmix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Farthest point sampling. The first index is drawn uniformly from the seed;
/// each subsequent pick maximizes the distance to the chosen set, ties going to
/// the smaller index.
std::vector<int> fps(std::span<const Vec3> positions, std::size_t k, std::uint64_t seed);

/// FPS with an explicit first index.
std::vector<int> fps_from(std::span<const Vec3> positions, std::size_t k, int first);

/// Per ground-truth instance, draws a uniform count in [min, max] (clamped to
/// the instance size) and picks that many candidate clicks with the configured
/// strategy. Clicks are snapped to scene points and carry group = instance id.
ClickSet sample_click_candidates(const PointCloud& scene, std::span<const int> instance_ids,
                                 const SamplerConfig& cfg);

/// Keeps min(n, available) clicks per instance group (n = nullopt draws a
/// uniform count in [1, available] per group). Input order is preserved.
ClickSet subset_clicks(const ClickSet& candidates, std::optional<int> n_per_instance,
                       std::uint64_t seed);

/// Per-step training subset: random per-instance counts, then trimmed so the
/// scene total lands in [clicks_per_scene_min, clicks_per_scene_max] where the
/// instance count allows it (each instance keeps at least one click).
ClickSet training_subset(const ClickSet& candidates, const SamplerConfig& cfg,
                         std::uint64_t seed);

/// Minimum pairwise distance within a subset (infinity for fewer than 2).
double min_pairwise_distance(std::span<const Vec3> positions, std::span<const int> subset);

}  // namespace clickseg
