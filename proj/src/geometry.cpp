// SPDX-License-Identifier: Apache-2.0

#include "clickseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <queue>

namespace clickseg {

void PointCloud::validate() const {
  if (positions.empty()) throw Error("point cloud is empty");
  for (const auto& p : positions)
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
      throw Error("point cloud has non-finite coordinates");
  if (has_attributes()) {
    if (attributes.rows() != positions.size())
      throw Error("attribute rows do not match point count");
    for (double v : attributes.storage())
      if (!std::isfinite(v)) throw Error("point cloud has non-finite attributes");
  }
}

Vec3 NormalizationTransform::apply(const Vec3& p) const {
  return {(p[0] - centroid[0]) / scale, (p[1] - centroid[1]) / scale,
          (p[2] - centroid[2]) / scale};
}

Vec3 NormalizationTransform::invert(const Vec3& p) const {
  return {p[0] * scale + centroid[0], p[1] * scale + centroid[1], p[2] * scale + centroid[2]};
}

NormalizationTransform fit_normalization(std::span<const Vec3> positions) {
  if (positions.empty()) throw Error("point cloud is empty");
  Vec3 lo = positions[0], hi = positions[0];
  for (const auto& p : positions)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  NormalizationTransform t;
  double extent = 0;
  for (int a = 0; a < 3; ++a) {
    t.centroid[a] = 0.5 * (lo[a] + hi[a]);
    extent = std::max(extent, hi[a] - lo[a]);
  }
  if (extent > 0) {
    t.scale = extent;
  } else {
    t.scale = 1.0;
    t.degenerate = true;
  }
  return t;
}

std::pair<PointCloud, NormalizationTransform> normalize_cloud(const PointCloud& cloud) {
  cloud.validate();
  const auto t = fit_normalization(cloud.positions);
  PointCloud out;
  out.id = cloud.id;
  out.attributes = cloud.attributes;
  out.positions.reserve(cloud.size());
  for (const auto& p : cloud.positions) {
    Vec3 q = t.apply(p);
    // Bounding-box center arithmetic can overshoot the half-extent by an ulp.
    for (double& v : q) v = std::clamp(v, -0.5, 0.5);
    out.positions.push_back(q);
  }
  return {std::move(out), t};
}

VoxelGrouping voxel_group(std::span<const Vec3> positions, double voxel_size) {
  if (!std::isfinite(voxel_size) || voxel_size <= 0)
    throw Error("voxel size must be finite and positive");
  using Key = std::array<std::int64_t, 3>;
  std::map<Key, std::vector<int>> cells;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    Key k;
    for (int a = 0; a < 3; ++a)
      k[a] = static_cast<std::int64_t>(std::floor(positions[i][a] / voxel_size));
    cells[k].push_back(static_cast<int>(i));
  }
  VoxelGrouping g;
  g.parent.assign(positions.size(), -1);
  g.centroids.reserve(cells.size());
  g.children.reserve(cells.size());
  for (auto& [key, members] : cells) {
    Vec3 c{0, 0, 0};
    for (int i : members)
      for (int a = 0; a < 3; ++a) c[a] += positions[i][a];
    for (int a = 0; a < 3; ++a) c[a] /= static_cast<double>(members.size());
    const int id = static_cast<int>(g.centroids.size());
    for (int i : members) g.parent[i] = id;
    g.centroids.push_back(c);
    g.children.push_back(std::move(members));
  }
  return g;
}

std::pair<PointCloud, std::vector<std::vector<int>>> voxel_downsample(const PointCloud& cloud,
                                                                      double voxel_size) {
  cloud.validate();
  auto g = voxel_group(cloud.positions, voxel_size);
  PointCloud out;
  out.id = cloud.id;
  out.positions = g.centroids;
  if (cloud.has_attributes()) {
    const std::size_t a = cloud.attributes.cols();
    out.attributes = Tensor<double>(g.children.size(), a);
    for (std::size_t c = 0; c < g.children.size(); ++c) {
      for (int i : g.children[c])
        for (std::size_t j = 0; j < a; ++j) out.attributes(c, j) += cloud.attributes(i, j);
      for (std::size_t j = 0; j < a; ++j)
        out.attributes(c, j) /= static_cast<double>(g.children[c].size());
    }
  }
  return {std::move(out), std::move(g.children)};
}

// ---------------------------------------------------------------------------
// SpatialIndex

namespace {
constexpr int kLeafSize = 12;

struct Candidate {
  double d2;
  int index;
  bool operator<(const Candidate& o) const {
    return d2 < o.d2 || (d2 == o.d2 && index < o.index);
  }
};
}  // namespace

SpatialIndex::SpatialIndex(std::span<const Vec3> points)
    : points_(points.begin(), points.end()), order_(points.size()) {
  if (points_.empty()) throw Error("point cloud is empty");
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  build(0, static_cast<int>(points_.size()));
}

int SpatialIndex::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (int i = begin; i < end; ++i)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], points_[order_[i]][a]);
      hi[a] = std::max(hi[a], points_[order_[i]][a]);
    }
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  if (hi[axis] - lo[axis] <= 0) return id;  // all coincident: keep as leaf

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int x, int y) {
                     const double px = points_[x][axis], py = points_[y][axis];
                     return px < py || (px == py && x < y);
                   });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& n = nodes_[id];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

std::vector<int> SpatialIndex::knn(const Vec3& query, std::size_t k) const {
  if (k == 0) throw Error("k must be positive");
  if (k > points_.size()) throw Error("insufficient points");
  std::priority_queue<Candidate> heap;  // worst candidate on top

  // Explicit stack: (node, lower bound on squared distance to its region).
  std::vector<std::pair<int, double>> stack;
  stack.emplace_back(0, 0.0);
  while (!stack.empty()) {
    const auto [id, bound] = stack.back();
    stack.pop_back();
    // Strict comparison: a region at exactly the current worst distance may
    // still hold a smaller index.
    if (heap.size() == k && bound > heap.top().d2) continue;
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int idx = order_[i];
        const Candidate c{sq_dist(points_[idx], query), idx};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      continue;
    }
    const double diff = query[n.axis] - n.split;
    const double plane = diff * diff;
    // Left holds coordinates <= split, right holds >= split.
    const int near = diff <= 0 ? n.left : n.right;
    const int far = diff <= 0 ? n.right : n.left;
    stack.emplace_back(far, std::max(bound, plane));
    stack.emplace_back(near, bound);
  }
  std::vector<int> out(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    out[i] = heap.top().index;
    heap.pop();
  }
  return out;
}

int SpatialIndex::nearest(const Vec3& query) const { return knn(query, 1).front(); }

SpatialIndex build_index(const PointCloud& cloud) {
  cloud.validate();
  return SpatialIndex(cloud.positions);
}

std::vector<int> brute_force_knn(std::span<const Vec3> points, const Vec3& query, std::size_t k) {
  if (k > points.size()) throw Error("insufficient points");
  std::vector<Candidate> all(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    all[i] = {sq_dist(points[i], query), static_cast<int>(i)};
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
  std::vector<int> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = all[i].index;
  return out;
}

}  // namespace clickseg
