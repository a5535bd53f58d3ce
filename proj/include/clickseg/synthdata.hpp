// SPDX-License-Identifier: Apache-2.0
//
// Procedural scenes: primitives resting on an optional floor (and wall) inside
// a unit room, sampled uniformly by surface area with Gaussian noise.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clickseg/types.hpp"

namespace clickseg {

enum class ShapeClass : int { sphere = 0, box, cylinder, cone, torus, floor, wall, clutter };
inline constexpr int kShapeClassCount = 8;

std::string to_string(ShapeClass c);

struct SceneSpec {
  int min_instances = 3;
  int max_instances = 6;
  std::vector<ShapeClass> palette{ShapeClass::sphere, ShapeClass::box,   ShapeClass::cylinder,
                                  ShapeClass::cone,   ShapeClass::torus, ShapeClass::clutter};
  int min_points = 100;  // per instance
  int max_points = 250;
  bool floor = true;
  bool wall = false;
  int floor_points = 400;
  int wall_points = 200;
  double room_size = 1.0;
  double min_radius = 0.06;  // bounding radius of an instance
  double max_radius = 0.14;
  double spacing = 0.9;      // minimum center distance = spacing * (r_a + r_b)
  double noise = 0.003;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Deterministic in the spec (including its seed). Background points carry
/// instance and class id -1. Throws when instances cannot be placed within
/// 1000 attempts.
SceneData generate_scene(const SceneSpec& spec);

/// `count` scenes with sub-seeds derived from spec.seed; ids are "scene-<i>".
std::vector<SceneData> generate_scenes(const SceneSpec& spec, std::size_t count);

/// Area-uniform samples on the unit sphere surface (used by tests).
std::vector<Vec3> sample_sphere_surface(std::size_t n, std::uint64_t seed);

}  // namespace clickseg
