// SPDX-License-Identifier: Apache-2.0
//
// Farthest point sampling, click candidate pools and subsets.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "clickseg/sampling.hpp"
#include "test_util.hpp"

using namespace clickseg;
using clickseg::testing::random_points;

namespace {

// Independent O(N k) farthest point sampling oracle.
std::vector<int> naive_fps(const std::vector<Vec3>& pts, std::size_t k, int first) {
  std::vector<int> out{first};
  while (out.size() < k) {
    int best = -1;
    double best_d = -1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(out.begin(), out.end(), static_cast<int>(i)) != out.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (int c : out) d = std::min(d, sq_dist(pts[i], pts[c]));
      if (d > best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    out.push_back(best);
  }
  return out;
}

struct Scene {
  PointCloud cloud;
  std::vector<int> ids;
};

// Instances are unit-spaced blobs of the given sizes; a few background points.
Scene blob_scene(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
  Scene s;
  for (std::size_t inst = 0; inst < sizes.size(); ++inst) {
    auto pts = random_points(sizes[inst], seed * 31 + inst, -0.3, 0.3);
    for (auto& p : pts) {
      p[0] += 2.0 * static_cast<double>(inst);
      s.cloud.positions.push_back(p);
      s.ids.push_back(static_cast<int>(inst));
    }
  }
  for (auto& p : random_points(10, seed + 999, 5.0, 6.0)) {
    s.cloud.positions.push_back(p);
    s.ids.push_back(-1);
  }
  return s;
}

std::map<int, int> count_by_group(const ClickSet& c) {
  std::map<int, int> out;
  for (const auto& k : c.clicks) ++out[k.group];
  return out;
}

}  // namespace

TEST(Fps, FarthestPointForced) {
  const std::vector<Vec3> pts{{0, 0, 0}, {0.5, 0, 0}, {1, 0, 0}, {10, 0, 0}};
  EXPECT_EQ(fps_from(pts, 2, 0), (std::vector<int>{0, 3}));
}

TEST(Fps, ExhaustionReturnsAllIndices) {
  auto pts = random_points(37, 4);
  auto got = fps(pts, pts.size(), 9);
  std::sort(got.begin(), got.end());
  std::vector<int> all(pts.size());
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(got, all);
}

TEST(Fps, DuplicatesTieToSmallerIndex) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {1, 0, 0}, {0, 0, 0}};
  EXPECT_EQ(fps_from(pts, 4, 0), (std::vector<int>{0, 1, 2, 3}));
}

TEST(Fps, MatchesNaiveOracle) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto pts = random_points(80 + seed, seed);
    const int first = static_cast<int>(seed % pts.size());
    EXPECT_EQ(fps_from(pts, 20, first), naive_fps(pts, 20, first));
  }
}

TEST(Fps, DeterministicAndErrors) {
  auto pts = random_points(100, 2);
  EXPECT_EQ(fps(pts, 10, 5), fps(pts, 10, 5));
  EXPECT_THROW(fps(pts, 0, 1), Error);
  EXPECT_THROW(fps(pts, 101, 1), Error);
  EXPECT_THROW(fps_from(pts, 3, 100), Error);
}

TEST(Fps, MinPairwiseDistanceNonIncreasingInK) {
  auto pts = random_points(400, 12);
  const auto order = fps_from(pts, 60, 0);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 2; k <= order.size(); ++k) {
    const double d = min_pairwise_distance(pts, std::span<const int>(order.data(), k));
    EXPECT_LE(d, prev);
    prev = d;
  }
}

TEST(Fps, SpreadsBetterThanRandomSubsets) {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto pts = random_points(1024, 5000 + seed, 0.0, 1.0);
    const auto f = fps(pts, 16, seed);
    std::vector<int> r(pts.size());
    std::iota(r.begin(), r.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(r.begin(), r.end(), rng);
    r.resize(16);
    if (min_pairwise_distance(pts, f) >= min_pairwise_distance(pts, r)) ++wins;
  }
  EXPECT_GE(wins, 95);
}

TEST(Candidates, SingleInstanceWithinRangeAndOnInstance) {
  auto s = blob_scene({100}, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SamplerConfig cfg;
    cfg.seed = seed;
    const auto c = sample_click_candidates(s.cloud, s.ids, cfg);
    EXPECT_GE(c.size(), 1u);
    EXPECT_LE(c.size(), 15u);
    for (const auto& k : c.clicks) {
      ASSERT_GE(k.point_index, 0);
      EXPECT_EQ(s.ids[k.point_index], 0);
      EXPECT_EQ(k.position, s.cloud.positions[k.point_index]);
      EXPECT_EQ(k.group, 0);
      EXPECT_EQ(k.source_instance, 0);
    }
  }
}

TEST(Candidates, SmallInstanceReturnsAllPoints) {
  auto s = blob_scene({2, 50}, 3);
  SamplerConfig cfg;
  cfg.per_instance_min = 15;
  for (auto strategy : {SamplingStrategy::fps, SamplingStrategy::random}) {
    cfg.strategy = strategy;
    const auto counts = count_by_group(sample_click_candidates(s.cloud, s.ids, cfg));
    EXPECT_EQ(counts.at(0), 2);
    EXPECT_EQ(counts.at(1), 15);
  }
}

TEST(Candidates, EveryStrategyEmitsDistinctScenePoints) {
  auto s = blob_scene({60, 120, 30}, 9);
  for (auto strategy : {SamplingStrategy::fps, SamplingStrategy::random, SamplingStrategy::voxel}) {
    SamplerConfig cfg;
    cfg.strategy = strategy;
    cfg.seed = 17;
    const auto c = sample_click_candidates(s.cloud, s.ids, cfg);
    std::set<int> seen;
    for (const auto& k : c.clicks) {
      EXPECT_TRUE(seen.insert(k.point_index).second);
      EXPECT_EQ(k.position, s.cloud.positions[k.point_index]);
      EXPECT_EQ(s.ids[k.point_index], k.group);
    }
    for (const auto& [g, n] : count_by_group(c)) {
      EXPECT_GE(n, 1);
      EXPECT_LE(n, 15);
    }
    EXPECT_EQ(c.distinct_groups(), (std::vector<int>{0, 1, 2}));
    const auto again = sample_click_candidates(s.cloud, s.ids, cfg);
    ASSERT_EQ(again.size(), c.size());
    for (std::size_t i = 0; i < c.size(); ++i)
      EXPECT_EQ(again.clicks[i].point_index, c.clicks[i].point_index);
  }
}

TEST(Candidates, FpsSpreadsBetterThanRandom) {
  int trials = 0, wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto s = blob_scene({300, 300}, 100 + seed);
    SamplerConfig cfg;
    cfg.seed = seed;
    cfg.per_instance_min = cfg.per_instance_max = 8;
    const auto f = sample_click_candidates(s.cloud, s.ids, cfg);
    cfg.strategy = SamplingStrategy::random;
    const auto r = sample_click_candidates(s.cloud, s.ids, cfg);
    for (int inst : {0, 1}) {
      std::vector<int> fi, ri;
      for (const auto& k : f.clicks)
        if (k.group == inst) fi.push_back(k.point_index);
      for (const auto& k : r.clicks)
        if (k.group == inst) ri.push_back(k.point_index);
      ++trials;
      if (min_pairwise_distance(s.cloud.positions, fi) >= min_pairwise_distance(s.cloud.positions, ri))
        ++wins;
    }
  }
  EXPECT_GE(wins, trials * 9 / 10);
}

TEST(Candidates, Errors) {
  auto s = blob_scene({10}, 1);
  std::vector<int> none(s.ids.size(), -1);
  EXPECT_THROW(sample_click_candidates(s.cloud, none, SamplerConfig{}), Error);
  std::vector<int> short_ids(3, 0);
  EXPECT_THROW(sample_click_candidates(s.cloud, short_ids, SamplerConfig{}), Error);
  SamplerConfig bad;
  bad.per_instance_min = 4;
  bad.per_instance_max = 3;
  EXPECT_THROW(sample_click_candidates(s.cloud, s.ids, bad), Error);
  EXPECT_THROW(parse_strategy("grid"), Error);
  for (auto st : {SamplingStrategy::fps, SamplingStrategy::random, SamplingStrategy::voxel})
    EXPECT_EQ(parse_strategy(to_string(st)), st);
}

TEST(Subset, OnePerInstance) {
  auto s = blob_scene({50, 50, 50}, 2);
  const auto c = sample_click_candidates(s.cloud, s.ids, SamplerConfig{});
  const auto sub = subset_clicks(c, 1, 4);
  EXPECT_EQ(sub.size(), 3u);
  EXPECT_EQ(sub.distinct_groups(), (std::vector<int>{0, 1, 2}));
}

TEST(Subset, LargeCountIsIdentity) {
  auto s = blob_scene({50, 50}, 2);
  const auto c = sample_click_candidates(s.cloud, s.ids, SamplerConfig{});
  const auto sub = subset_clicks(c, 100, 4);
  ASSERT_EQ(sub.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(sub.clicks[i].point_index, c.clicks[i].point_index);
    EXPECT_EQ(sub.clicks[i].group, c.clicks[i].group);
  }
  EXPECT_THROW(subset_clicks(ClickSet{}, 1, 0), Error);
  EXPECT_THROW(subset_clicks(c, 0, 0), Error);
}

TEST(Subset, RandomCountsAreUniform) {
  // Six candidates in one group; counts should be uniform over 1..6.
  ClickSet c;
  for (int i = 0; i < 6; ++i) c.clicks.push_back(Click{{double(i), 0, 0}, 7, 7, i});
  const int trials = 600;
  std::vector<int> hist(7, 0);
  for (int seed = 0; seed < trials; ++seed) {
    const auto sub = subset_clicks(c, std::nullopt, static_cast<std::uint64_t>(seed));
    ASSERT_GE(sub.size(), 1u);
    ASSERT_LE(sub.size(), 6u);
    ++hist[sub.size()];
    EXPECT_TRUE(std::is_sorted(sub.clicks.begin(), sub.clicks.end(),
                               [](const Click& a, const Click& b) { return a.point_index < b.point_index; }));
  }
  double chi2 = 0;
  const double expected = trials / 6.0;
  for (int v = 1; v <= 6; ++v) chi2 += (hist[v] - expected) * (hist[v] - expected) / expected;
  EXPECT_LT(chi2, 20.52);  // 5 dof, p = 0.001
}

TEST(Subset, TrainingSubsetRespectsSceneBudget) {
  auto s = blob_scene({200, 200, 200, 200, 200}, 5);
  SamplerConfig cfg;
  cfg.per_instance_min = cfg.per_instance_max = 15;
  const auto c = sample_click_candidates(s.cloud, s.ids, cfg);
  cfg.clicks_per_scene_min = 10;
  cfg.clicks_per_scene_max = 12;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto sub = training_subset(c, cfg, seed);
    EXPECT_LE(sub.size(), 12u);
    EXPECT_EQ(sub.distinct_groups().size(), 5u);
  }
  cfg.clicks_per_scene_min = cfg.clicks_per_scene_max = 2;
  EXPECT_EQ(training_subset(c, cfg, 1).size(), 5u);  // each instance keeps one click
}

TEST(Seeds, MixSeedSpreadsNeighbours) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 10; ++a)
    for (std::uint64_t b = 0; b < 10; ++b) seen.insert(mix_seed(a, b));
  EXPECT_EQ(seen.size(), 100u);
}
