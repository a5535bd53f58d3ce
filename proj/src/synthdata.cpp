// SPDX-License-Identifier: Apache-2.0

#include "clickseg/synthdata.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "clickseg/sampling.hpp"

namespace clickseg {

namespace {

using Rng = std::mt19937_64;
constexpr double kPi = std::numbers::pi;

double uni(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 unit_sphere(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Vec3 v{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len > 1e-12) return {v[0] / len, v[1] / len, v[2] / len};
  }
}

/// Picks an index with probability proportional to `weights`.
std::size_t pick(Rng& rng, std::initializer_list<double> weights) {
  return std::discrete_distribution<std::size_t>(weights)(rng);
}

// Local shapes are centered on the z axis, standing on z = 0, with bounding
// radius r about (0, 0, r).

Vec3 sample_sphere(Rng& rng, double r) {
  const Vec3 d = unit_sphere(rng);
  return {r * d[0], r * d[1], r + r * d[2]};
}

Vec3 sample_box(Rng& rng, const Vec3& half) {
  const double a = half[0], b = half[1], c = half[2];
  const double axy = a * b, axz = a * c, ayz = b * c;
  const std::size_t face = pick(rng, {axy, axy, axz, axz, ayz, ayz});
  const double s = uni(rng, -1, 1), t = uni(rng, -1, 1);
  Vec3 p;
  switch (face) {
    case 0: p = {s * a, t * b, -c}; break;
    case 1: p = {s * a, t * b, c}; break;
    case 2: p = {s * a, -b, t * c}; break;
    case 3: p = {s * a, b, t * c}; break;
    case 4: p = {-a, s * b, t * c}; break;
    default: p = {a, s * b, t * c}; break;
  }
  return {p[0], p[1], p[2] + c};
}

Vec3 sample_cylinder(Rng& rng, double radius, double height) {
  const double side = 2 * kPi * radius * height, cap = kPi * radius * radius;
  const std::size_t part = pick(rng, {side, cap, cap});
  const double phi = uni(rng, 0, 2 * kPi);
  if (part == 0) return {radius * std::cos(phi), radius * std::sin(phi), uni(rng, 0, height)};
  const double rr = radius * std::sqrt(uni(rng));
  return {rr * std::cos(phi), rr * std::sin(phi), part == 1 ? 0.0 : height};
}

Vec3 sample_cone(Rng& rng, double radius, double height) {
  const double slant = std::sqrt(radius * radius + height * height);
  const double lateral = kPi * radius * slant, base = kPi * radius * radius;
  const double phi = uni(rng, 0, 2 * kPi);
  if (pick(rng, {lateral, base}) == 0) {
    const double t = std::sqrt(uni(rng));  // distance fraction from the apex
    return {t * radius * std::cos(phi), t * radius * std::sin(phi), height * (1 - t)};
  }
  const double rr = radius * std::sqrt(uni(rng));
  return {rr * std::cos(phi), rr * std::sin(phi), 0.0};
}

Vec3 sample_torus(Rng& rng, double major, double minor) {
  for (;;) {
    const double theta = uni(rng, 0, 2 * kPi), phi = uni(rng, 0, 2 * kPi);
    // area element is proportional to (R + r cos theta)
    if (uni(rng) * (major + minor) > major + minor * std::cos(theta)) continue;
    const double w = major + minor * std::cos(theta);
    return {w * std::cos(phi), w * std::sin(phi), minor + minor * std::sin(theta)};
  }
}

struct Shape {
  ShapeClass cls;
  double r;
  Vec3 box_half{};
  double yaw = 0;
  Vec3 clutter_axes{};
};

Vec3 sample_local(Rng& rng, const Shape& s) {
  switch (s.cls) {
    case ShapeClass::sphere: return sample_sphere(rng, s.r);
    case ShapeClass::box: return sample_box(rng, s.box_half);
    case ShapeClass::cylinder: return sample_cylinder(rng, 0.6 * s.r, 1.2 * s.r);
    case ShapeClass::cone: return sample_cone(rng, 0.7 * s.r, 1.4 * s.r);
    case ShapeClass::torus: return sample_torus(rng, 0.7 * s.r, 0.3 * s.r);
    default: {
      const Vec3 d = unit_sphere(rng);
      const Vec3& a = s.clutter_axes;
      return {a[0] * d[0], a[1] * d[1], a[2] + a[2] * d[2]};
    }
  }
}

Shape make_shape(Rng& rng, ShapeClass cls, double r) {
  Shape s{cls, r};
  s.yaw = uni(rng, 0, 2 * kPi);
  if (cls == ShapeClass::box) {
    Vec3 h{uni(rng, 0.5, 1.0), uni(rng, 0.5, 1.0), uni(rng, 0.5, 1.0)};
    const double len = std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
    for (auto& v : h) v *= r / len;
    s.box_half = h;
  } else if (cls == ShapeClass::clutter) {
    s.clutter_axes = {r * uni(rng, 0.4, 1.0), r * uni(rng, 0.4, 1.0), r * uni(rng, 0.2, 0.5)};
  }
  return s;
}

}  // namespace

std::string to_string(ShapeClass c) {
  switch (c) {
    case ShapeClass::sphere: return "sphere";
    case ShapeClass::box: return "box";
    case ShapeClass::cylinder: return "cylinder";
    case ShapeClass::cone: return "cone";
    case ShapeClass::torus: return "torus";
    case ShapeClass::floor: return "floor";
    case ShapeClass::wall: return "wall";
    case ShapeClass::clutter: return "clutter";
  }
  return "unknown";
}

void SceneSpec::validate() const {
  if (min_instances < 0 || max_instances < min_instances) throw Error("invalid instance count range");
  if (min_points < 1 || max_points < min_points) throw Error("invalid points-per-instance range");
  if (palette.empty() && max_instances > 0) throw Error("empty class palette");
  for (ShapeClass c : palette)
    if (c == ShapeClass::floor || c == ShapeClass::wall)
      throw Error("floor and wall are background, not instance classes");
  if (floor_points < 0 || wall_points < 0) throw Error("background point counts must be non-negative");
  if (!(room_size > 0)) throw Error("room size must be positive");
  if (!(min_radius > 0) || max_radius < min_radius || 2 * max_radius > room_size)
    throw Error("invalid instance radius range");
  if (!(spacing > 0)) throw Error("spacing factor must be positive");
  if (!(noise >= 0)) throw Error("noise must be non-negative");
}

SceneData generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x5ce9e));
  std::normal_distribution<double> jitter(0.0, spec.noise > 0 ? spec.noise : 1.0);
  auto noisy = [&](Vec3 p) {
    if (spec.noise > 0)
      for (auto& v : p) v += jitter(rng);
    return p;
  };

  SceneData scene;
  scene.cloud.id = "synth-" + std::to_string(spec.seed);
  const int count = std::uniform_int_distribution<int>(spec.min_instances, spec.max_instances)(rng);

  std::vector<std::pair<Vec3, double>> placed;  // (xy center, radius)
  int attempts = 0;
  for (int inst = 0; inst < count; ++inst) {
    const ShapeClass cls =
        spec.palette[std::uniform_int_distribution<std::size_t>(0, spec.palette.size() - 1)(rng)];
    const double r = uni(rng, spec.min_radius, spec.max_radius);
    Vec3 c{};
    for (;;) {
      if (++attempts > 1000) throw Error("cannot place instances after 1000 attempts");
      c = {uni(rng, r, spec.room_size - r), uni(rng, r, spec.room_size - r), 0.0};
      bool ok = true;
      for (const auto& [o, ro] : placed) {
        const double dx = c[0] - o[0], dy = c[1] - o[1];
        if (std::sqrt(dx * dx + dy * dy) < spec.spacing * (r + ro)) {
          ok = false;
          break;
        }
      }
      if (ok) break;
    }
    placed.emplace_back(c, r);
    const Shape shape = make_shape(rng, cls, r);
    const double cy = std::cos(shape.yaw), sy = std::sin(shape.yaw);
    const int n = std::uniform_int_distribution<int>(spec.min_points, spec.max_points)(rng);
    for (int i = 0; i < n; ++i) {
      const Vec3 l = sample_local(rng, shape);
      const Vec3 p{c[0] + cy * l[0] - sy * l[1], c[1] + sy * l[0] + cy * l[1], l[2]};
      scene.cloud.positions.push_back(noisy(p));
      scene.instance_ids.push_back(inst);
      scene.class_ids.push_back(static_cast<int>(cls));
    }
  }
  if (spec.floor) {
    for (int i = 0; i < spec.floor_points; ++i) {
      scene.cloud.positions.push_back(
          noisy({uni(rng, 0, spec.room_size), uni(rng, 0, spec.room_size), 0.0}));
      scene.instance_ids.push_back(-1);
      scene.class_ids.push_back(-1);
    }
  }
  if (spec.wall) {
    const double h = 2 * spec.max_radius + 0.1 * spec.room_size;
    for (int i = 0; i < spec.wall_points; ++i) {
      scene.cloud.positions.push_back(noisy({-0.02 * spec.room_size, uni(rng, 0, spec.room_size), uni(rng, 0, h)}));
      scene.instance_ids.push_back(-1);
      scene.class_ids.push_back(-1);
    }
  }
  if (scene.cloud.positions.empty()) throw Error("scene spec produced no points");
  return scene;
}

std::vector<SceneData> generate_scenes(const SceneSpec& spec, std::size_t count) {
  std::vector<SceneData> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneSpec s = spec;
    s.seed = mix_seed(spec.seed, i);
    out.push_back(generate_scene(s));
    out.back().cloud.id = "scene-" + std::to_string(i);
  }
  return out;
}

std::vector<Vec3> sample_sphere_surface(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> out(n);
  for (auto& p : out) {
    p = sample_sphere(rng, 1.0);
    p[2] -= 1.0;
  }
  return out;
}

}  // namespace clickseg
