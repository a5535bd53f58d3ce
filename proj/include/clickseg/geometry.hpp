// SPDX-License-Identifier: Apache-2.0
//
// Point-cloud containers, unit-cube normalization, voxel grouping and an exact
// k-nearest-neighbour index.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clickseg/tensor.hpp"

namespace clickseg {

using Vec3 = std::array<double, 3>;

inline double sq_dist(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// N points in meters plus optional per-point attributes (N x A, e.g. RGB).
struct PointCloud {
  std::vector<Vec3> positions;
  Tensor<double> attributes;  // 0 x 0 when absent
  std::string id;

  std::size_t size() const { return positions.size(); }
  bool has_attributes() const { return attributes.rows() > 0; }

  /// Throws Error when empty, non-finite, or attributes misaligned.
  void validate() const;
};

/// Maps a cloud into [-0.5, 0.5]^3: p' = (p - centroid) / scale, where centroid
/// is the bounding-box center and scale the longest bounding-box side.
struct NormalizationTransform {
  Vec3 centroid{0, 0, 0};
  double scale = 1.0;
  bool degenerate = false;  // all points coincident; scale forced to 1

  Vec3 apply(const Vec3& p) const;
  Vec3 invert(const Vec3& p) const;
};

NormalizationTransform fit_normalization(std::span<const Vec3> positions);
std::pair<PointCloud, NormalizationTransform> normalize_cloud(const PointCloud& cloud);

/// Result of grouping points by cubic voxels of a fixed size.
struct VoxelGrouping {
  std::vector<Vec3> centroids;                // one per occupied voxel
  std::vector<std::vector<int>> children;     // coarse -> ascending fine indices
  std::vector<int> parent;                    // fine -> coarse
};

/// Voxels are ordered by integer voxel key, so the grouping does not depend on
/// input order. Throws on non-finite or non-positive voxel size.
VoxelGrouping voxel_group(std::span<const Vec3> positions, double voxel_size);

/// voxel_group on a cloud; attributes are averaged like positions.
std::pair<PointCloud, std::vector<std::vector<int>>> voxel_downsample(const PointCloud& cloud,
                                                                      double voxel_size);

/// Exact KNN over a fixed point set (kd-tree). Results match a brute-force scan
/// sorted by (squared distance, index).
class SpatialIndex {
 public:
  explicit SpatialIndex(std::span<const Vec3> points);
  explicit SpatialIndex(const PointCloud& cloud) : SpatialIndex(cloud.positions) {}

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  /// k indices by ascending distance; throws "insufficient points" when k > N.
  std::vector<int> knn(const Vec3& query, std::size_t k) const;
  int nearest(const Vec3& query) const;

 private:
  struct Node {
    int begin = 0, end = 0;  // range in order_
    int left = -1, right = -1;
    int axis = -1;           // -1 for leaves
    double split = 0;
  };
  int build(int begin, int end);

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

SpatialIndex build_index(const PointCloud& cloud);

/// Reference scan used by tests and tiny inputs.
std::vector<int> brute_force_knn(std::span<const Vec3> points, const Vec3& query, std::size_t k);

}  // namespace clickseg
