// SPDX-License-Identifier: Apache-2.0
//
// Single-forward-pass segmentation and the post-processing that turns the
// final stage's logits into exclusive per-point labels.
#pragma once

#include "clickseg/model.hpp"

namespace clickseg {

/// Per point: background when every mask logit is negative (sigmoid < 0.5);
/// otherwise the group of the arg-max query (ties to the smaller index).
/// point_class is the arg-max class of the winning query; a group's class and
/// confidence come from its member query with the highest class probability.
template <class T>
SegmentationResult finalize(const StageOutput<T>& final_stage, const ClickSet& clicks);

/// Snaps every click to its nearest scene point (position and point_index).
ClickSet snap_clicks(const PointCloud& scene, const ClickSet& clicks);
ClickSet snap_clicks(const SpatialIndex& index, const ClickSet& clicks);

/// Runs the model on a scene. Repeated clicks (same position and group) are
/// dropped first. Scenes larger than the model's max_points are voxel-reduced
/// and labels are copied back to every input point.
template <class T>
SegmentationResult segment(const PointCloud& scene, const ClickSet& clicks, const Model<T>& model);

/// Same as segment() with a prepared scene (reused across calls).
template <class T>
SegmentationResult segment(const PreparedScene& scene, const ClickSet& clicks,
                           const Model<T>& model);

/// Group id -> member query indices, in ascending group order.
std::vector<std::pair<int, std::vector<int>>> group_members(const ClickSet& clicks);

/// Clicks with repeated (position, group) pairs removed; first occurrence kept.
ClickSet unique_clicks(const ClickSet& clicks);

}  // namespace clickseg
