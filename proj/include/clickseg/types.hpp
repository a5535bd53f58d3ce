// SPDX-License-Identifier: Apache-2.0
//
// Value types shared across modules and serialized by scene_io.
#pragma once

#include <vector>

#include "clickseg/geometry.hpp"

namespace clickseg {

/// A scene with optional ground truth. instance_ids uses -1 for background;
/// class_ids is per point and aligned with instance_ids (-1 on background).
struct SceneData {
  PointCloud cloud;
  std::vector<int> instance_ids;
  std::vector<int> class_ids;

  bool has_ground_truth() const { return !instance_ids.empty(); }
  void validate() const;
};

struct Click {
  Vec3 position{0, 0, 0};
  int group = 0;            // clicks sharing a group label one object
  int source_instance = -1; // ground-truth instance when simulated, else -1
  int point_index = -1;     // scene point the click is snapped to, -1 if unknown
};

struct ClickSet {
  std::vector<Click> clicks;

  std::size_t size() const { return clicks.size(); }
  bool empty() const { return clicks.empty(); }
  std::vector<int> distinct_groups() const;  // ascending
};

/// Final per-point labelling. point_instance holds click-group ids (-1 is
/// background); groups lists every distinct group of the input clicks.
struct SegmentationResult {
  std::vector<int> point_instance;
  std::vector<int> point_class;
  std::vector<int> groups;
  std::vector<int> group_class;
  std::vector<double> group_confidence;

  bool operator==(const SegmentationResult&) const = default;
};

}  // namespace clickseg
