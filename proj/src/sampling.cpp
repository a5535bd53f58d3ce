// SPDX-License-Identifier: Apache-2.0

#include "clickseg/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "clickseg/simd.hpp"

namespace clickseg {

SamplingStrategy parse_strategy(const std::string& name) {
  if (name == "fps") return SamplingStrategy::fps;
  if (name == "random") return SamplingStrategy::random;
  if (name == "voxel") return SamplingStrategy::voxel;
  throw Error("unknown sampling strategy '" + name + "'");
}

std::string to_string(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::fps: return "fps";
    case SamplingStrategy::random: return "random";
    case SamplingStrategy::voxel: return "voxel";
  }
  return "fps";
}

void SamplerConfig::validate() const {
  if (per_instance_min < 1 || per_instance_max < per_instance_min)
    throw Error("sampler requires 1 <= per_instance_min <= per_instance_max");
  if (clicks_per_scene_min < 1 || clicks_per_scene_max < clicks_per_scene_min)
    throw Error("sampler requires 1 <= clicks_per_scene_min <= clicks_per_scene_max");
  if (!(voxel_size > 0)) throw Error("sampler voxel size must be positive");
  if (augmentation.jitter_stddev < 0 || augmentation.max_rotation < 0)
    throw Error("augmentation parameters must be non-negative");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<int> fps_from(std::span<const Vec3> positions, std::size_t k, int first) {
  const std::size_t n = positions.size();
  if (k < 1 || k > n) throw Error("fps requires 1 <= k <= N");
  if (first < 0 || static_cast<std::size_t>(first) >= n) throw Error("fps start out of range");
  std::vector<double> xs(n), ys(n), zs(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = positions[i][0];
    ys[i] = positions[i][1];
    zs[i] = positions[i][2];
  }
  std::vector<double> min_sq(n, std::numeric_limits<double>::infinity());
  const auto update = simd::min_sq_dist_update();
  std::vector<int> out;
  out.reserve(k);
  int cur = first;
  while (true) {
    out.push_back(cur);
    if (out.size() == k) break;
    const Vec3& q = positions[cur];
    update(xs.data(), ys.data(), zs.data(), n, q[0], q[1], q[2], min_sq.data());
    min_sq[cur] = -1.0;  // chosen points never win again, even among duplicates
    int best = -1;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i)
      if (min_sq[i] > best_d) {
        best_d = min_sq[i];
        best = static_cast<int>(i);
      }
    cur = best;
  }
  return out;
}

std::vector<int> fps(std::span<const Vec3> positions, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > positions.size()) throw Error("fps requires 1 <= k <= N");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, positions.size() - 1);
  return fps_from(positions, k, static_cast<int>(pick(rng)));
}

double min_pairwise_distance(std::span<const Vec3> positions, std::span<const int> subset) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < subset.size(); ++i)
    for (std::size_t j = i + 1; j < subset.size(); ++j)
      best = std::min(best, sq_dist(positions[subset[i]], positions[subset[j]]));
  return std::sqrt(best);
}

namespace {

std::map<int, std::vector<int>> points_by_instance(std::span<const int> instance_ids) {
  std::map<int, std::vector<int>> out;
  for (std::size_t i = 0; i < instance_ids.size(); ++i)
    if (instance_ids[i] >= 0) out[instance_ids[i]].push_back(static_cast<int>(i));
  return out;
}

std::vector<int> pick_for_instance(const PointCloud& scene, const std::vector<int>& members,
                                   std::size_t n, double scene_scale, const SamplerConfig& cfg,
                                   std::mt19937_64& rng) {
  switch (cfg.strategy) {
    case SamplingStrategy::fps: {
      // Distances are measured on an augmented copy; clicks stay in the
      // original frame.
      std::uniform_real_distribution<double> angle(0.0, cfg.augmentation.max_rotation);
      std::normal_distribution<double> noise(0.0, 1.0);
      const double theta = cfg.augmentation.max_rotation > 0 ? angle(rng) : 0.0;
      const double c = std::cos(theta), s = std::sin(theta);
      const double sigma = cfg.augmentation.jitter_stddev * scene_scale;
      std::vector<Vec3> aug(members.size());
      for (std::size_t i = 0; i < members.size(); ++i) {
        const Vec3& p = scene.positions[members[i]];
        aug[i] = {c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
        if (sigma > 0)
          for (double& v : aug[i]) v += sigma * noise(rng);
      }
      std::uniform_int_distribution<std::size_t> first(0, members.size() - 1);
      const auto local = fps_from(aug, n, static_cast<int>(first(rng)));
      std::vector<int> out;
      for (int l : local) out.push_back(members[l]);
      return out;
    }
    case SamplingStrategy::random: {
      std::vector<int> shuffled = members;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      shuffled.resize(n);
      return shuffled;
    }
    case SamplingStrategy::voxel: {
      std::vector<Vec3> pts;
      pts.reserve(members.size());
      for (int m : members) pts.push_back(scene.positions[m]);
      const auto g = voxel_group(pts, cfg.voxel_size * scene_scale);
      std::vector<int> reps;
      for (std::size_t v = 0; v < g.children.size(); ++v) {
        int best = g.children[v].front();
        for (int ch : g.children[v])
          if (sq_dist(pts[ch], g.centroids[v]) < sq_dist(pts[best], g.centroids[v])) best = ch;
        reps.push_back(members[best]);
      }
      std::shuffle(reps.begin(), reps.end(), rng);
      if (reps.size() > n) reps.resize(n);
      return reps;
    }
  }
  return {};
}

}  // namespace

ClickSet sample_click_candidates(const PointCloud& scene, std::span<const int> instance_ids,
                                 const SamplerConfig& cfg) {
  cfg.validate();
  scene.validate();
  if (instance_ids.size() != scene.size()) throw Error("instance_ids length mismatch");
  const auto groups = points_by_instance(instance_ids);
  if (groups.empty()) throw Error("scene has no labelled instance to sample clicks from");
  const double scale = fit_normalization(scene.positions).scale;

  ClickSet out;
  for (const auto& [inst, members] : groups) {
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(inst)));
    std::uniform_int_distribution<int> count(cfg.per_instance_min, cfg.per_instance_max);
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(count(rng)),
                                                members.size());
    for (int idx : pick_for_instance(scene, members, n, scale, cfg, rng))
      out.clicks.push_back(Click{scene.positions[idx], inst, inst, idx});
  }
  return out;
}

namespace {

ClickSet take_counts(const ClickSet& candidates, const std::map<int, std::vector<int>>& by_group,
                     const std::map<int, std::size_t>& counts, std::mt19937_64& rng) {
  std::vector<char> keep(candidates.size(), 0);
  for (const auto& [g, idxs] : by_group) {
    std::vector<int> shuffled = idxs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (std::size_t i = 0; i < counts.at(g); ++i) keep[shuffled[i]] = 1;
  }
  ClickSet out;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (keep[i]) out.clicks.push_back(candidates.clicks[i]);
  return out;
}

std::map<int, std::vector<int>> clicks_by_group(const ClickSet& c) {
  std::map<int, std::vector<int>> out;
  for (std::size_t i = 0; i < c.size(); ++i) out[c.clicks[i].group].push_back(static_cast<int>(i));
  return out;
}

}  // namespace

ClickSet subset_clicks(const ClickSet& candidates, std::optional<int> n_per_instance,
                       std::uint64_t seed) {
  if (candidates.empty()) throw Error("cannot subset an empty click set");
  if (n_per_instance && *n_per_instance < 1) throw Error("clicks per instance must be >= 1");
  const auto by_group = clicks_by_group(candidates);
  std::mt19937_64 rng(seed);
  std::map<int, std::size_t> counts;
  for (const auto& [g, idxs] : by_group) {
    if (n_per_instance) {
      counts[g] = std::min<std::size_t>(static_cast<std::size_t>(*n_per_instance), idxs.size());
    } else {
      std::uniform_int_distribution<std::size_t> d(1, idxs.size());
      counts[g] = d(rng);
    }
  }
  return take_counts(candidates, by_group, counts, rng);
}

ClickSet training_subset(const ClickSet& candidates, const SamplerConfig& cfg,
                         std::uint64_t seed) {
  if (candidates.empty()) throw Error("cannot subset an empty click set");
  const auto by_group = clicks_by_group(candidates);
  std::mt19937_64 rng(seed);
  std::map<int, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& [g, idxs] : by_group) {
    std::uniform_int_distribution<std::size_t> d(1, idxs.size());
    counts[g] = d(rng);
    total += counts[g];
  }
  std::uniform_int_distribution<int> target_d(cfg.clicks_per_scene_min, cfg.clicks_per_scene_max);
  const auto target = static_cast<std::size_t>(target_d(rng));
  while (total > target) {
    auto it = std::max_element(counts.begin(), counts.end(),
                               [](const auto& a, const auto& b) { return a.second < b.second; });
    if (it->second <= 1) break;
    --it->second;
    --total;
  }
  return take_counts(candidates, by_group, counts, rng);
}

}  // namespace clickseg
