// SPDX-License-Identifier: Apache-2.0
//
// Procedural scene generator: label census, determinism, placement and
// area-uniform surface sampling.

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <map>
#include <set>

#include "clickseg/geometry.hpp"
#include "clickseg/synthdata.hpp"

using namespace clickseg;

namespace {

SceneSpec single_sphere() {
  SceneSpec s;
  s.min_instances = s.max_instances = 1;
  s.palette = {ShapeClass::sphere};
  s.min_points = s.max_points = 200;
  s.floor = false;
  s.seed = 11;
  return s;
}

std::map<int, std::vector<std::size_t>> by_instance(const SceneData& s) {
  std::map<int, std::vector<std::size_t>> m;
  for (std::size_t i = 0; i < s.instance_ids.size(); ++i) m[s.instance_ids[i]].push_back(i);
  return m;
}

}  // namespace

TEST(SynthData, SingleSphere) {
  const auto s = generate_scene(single_sphere());
  ASSERT_EQ(s.cloud.size(), 200u);
  EXPECT_EQ(std::set<int>(s.instance_ids.begin(), s.instance_ids.end()), std::set<int>{0});
  EXPECT_EQ(std::set<int>(s.class_ids.begin(), s.class_ids.end()),
            std::set<int>{static_cast<int>(ShapeClass::sphere)});
}

TEST(SynthData, DeterministicPerSeed) {
  SceneSpec spec;
  spec.seed = 42;
  const auto a = generate_scene(spec), b = generate_scene(spec);
  EXPECT_EQ(a.cloud.positions, b.cloud.positions);
  EXPECT_EQ(a.instance_ids, b.instance_ids);
  EXPECT_EQ(a.class_ids, b.class_ids);
  spec.seed = 43;
  EXPECT_NE(generate_scene(spec).cloud.positions, a.cloud.positions);
}

TEST(SynthData, LabelCensusWithFloor) {
  SceneSpec spec;
  spec.min_instances = spec.max_instances = 5;
  spec.floor = true;
  spec.seed = 7;
  const auto s = generate_scene(spec);
  const auto groups = by_instance(s);
  ASSERT_TRUE(groups.count(-1));
  EXPECT_EQ(groups.size(), 6u);
  for (std::size_t i : groups.at(-1)) EXPECT_EQ(s.class_ids[i], -1);
}

TEST(SynthData, InstancesAreLargeEnoughAndSingleClass) {
  SceneSpec spec;
  spec.wall = true;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    spec.seed = seed;
    const auto s = generate_scene(spec);
    const auto groups = by_instance(s);
    const int instances = static_cast<int>(groups.size()) - (groups.count(-1) ? 1 : 0);
    EXPECT_GE(instances, spec.min_instances);
    EXPECT_LE(instances, spec.max_instances);
    for (const auto& [id, members] : groups) {
      if (id < 0) continue;
      EXPECT_GE(members.size(), static_cast<std::size_t>(spec.min_points));
      const int cls = s.class_ids[members[0]];
      EXPECT_TRUE(std::find(spec.palette.begin(), spec.palette.end(), static_cast<ShapeClass>(cls)) !=
                  spec.palette.end());
      for (std::size_t i : members) EXPECT_EQ(s.class_ids[i], cls);
    }
  }
}

TEST(SynthData, GenerateScenesUsesDistinctSeedsAndIds) {
  SceneSpec spec;
  spec.seed = 5;
  const auto scenes = generate_scenes(spec, 3);
  ASSERT_EQ(scenes.size(), 3u);
  EXPECT_EQ(scenes[0].cloud.id, "scene-0");
  EXPECT_EQ(scenes[2].cloud.id, "scene-2");
  EXPECT_NE(scenes[0].cloud.positions, scenes[1].cloud.positions);
  EXPECT_EQ(generate_scenes(spec, 3)[1].cloud.positions, scenes[1].cloud.positions);
}

TEST(SynthData, SphereSamplingIsAreaUniform) {
  // Octant counts against the uniform expectation; 7 degrees of freedom,
  // critical value 14.07 at the 5% level.
  const std::size_t n = 8000;
  int rejections = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto pts = sample_sphere_surface(n, seed);
    std::array<double, 8> counts{};
    for (const auto& p : pts) {
      EXPECT_NEAR(sq_dist(p, Vec3{0, 0, 0}), 1.0, 1e-12);
      counts[(p[0] > 0) + 2 * (p[1] > 0) + 4 * (p[2] > 0)] += 1;
    }
    double chi2 = 0;
    const double expected = n / 8.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    if (chi2 > 14.07) ++rejections;
  }
  EXPECT_LE(rejections, 4);  // about one in twenty expected by chance
}

TEST(SynthData, PlacementFailureThrows) {
  SceneSpec spec;
  spec.min_instances = spec.max_instances = 40;
  spec.min_radius = spec.max_radius = 0.3;
  EXPECT_THROW(generate_scene(spec), Error);
}

TEST(SynthData, InvalidSpecsThrow) {
  SceneSpec spec;
  spec.min_instances = 4;
  spec.max_instances = 2;
  EXPECT_THROW(generate_scene(spec), Error);
  spec = SceneSpec{};
  spec.palette.clear();
  EXPECT_THROW(generate_scene(spec), Error);
  spec = SceneSpec{};
  spec.palette = {ShapeClass::floor};
  EXPECT_THROW(generate_scene(spec), Error);
  spec = SceneSpec{};
  spec.noise = -1;
  EXPECT_THROW(generate_scene(spec), Error);
}

TEST(SynthData, ClassNames) {
  EXPECT_EQ(to_string(ShapeClass::torus), "torus");
  EXPECT_EQ(to_string(ShapeClass::clutter), "clutter");
}
