// SPDX-License-Identifier: Apache-2.0
//
// Metrics and the simulated-user protocol. Predicted groups correspond to
// ground-truth instances through the clicks that generated them.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clickseg/types.hpp"
#include "json.hpp"

namespace clickseg {

struct EvalProtocol {
  std::vector<int> schedule{1, 3, 5, 7, 10};  // clicks per instance
  std::vector<double> noc_targets{0.80, 0.85, 0.90};
  int max_clicks = 20;
  std::uint64_t seed = 0;
  bool connected_components = false;  // corrective clicks target the largest error component
  double component_radius = 0.03;     // neighbour radius (input units) for components

  void validate() const;
};

/// |a and b| / |a or b|; 1 when both are empty.
double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

/// Distinct non-negative instance ids, ascending.
std::vector<int> instance_list(const SceneData& scene);

/// Ground-truth class of an instance (class of its first point).
int instance_class(const SceneData& scene, int instance);

struct InstanceScore {
  int instance = -1;
  int cls = -1;
  double iou = 0.0;
};

/// IoU of every ground-truth instance against the group of its clicks (an
/// instance without clicks is compared with an empty prediction).
std::vector<InstanceScore> instance_ious(const SegmentationResult& result, const SceneData& scene,
                                         const ClickSet& clicks);

/// Mean over classes of the per-class mean instance IoU.
double class_mean_iou(const std::vector<InstanceScore>& scores);

double scene_miou(const SegmentationResult& result, const SceneData& scene, const ClickSet& clicks);

/// Mean over ground-truth classes of per-class point accuracy.
double mean_class_accuracy(const SegmentationResult& result, const SceneData& scene);

struct Prediction {
  std::vector<std::uint8_t> mask;
  int cls = -1;
  double confidence = 0.0;
  std::size_t scene = 0;  // predictions only match ground truth of the same scene
};

struct GtInstance {
  std::vector<std::uint8_t> mask;
  int cls = -1;
  std::size_t scene = 0;
};

/// Mean over ground-truth classes of all-point interpolated AP with greedy
/// matching in descending confidence at the given IoU threshold.
double map_at(const std::vector<Prediction>& predictions, const std::vector<GtInstance>& gt,
              double threshold);

std::vector<Prediction> predictions_from(const SegmentationResult& result, std::size_t scene = 0);
std::vector<GtInstance> gt_instances(const SceneData& scene, std::size_t scene_index = 0);

/// A corrective click, or nullopt when there is nothing left to correct.
std::optional<Click> next_corrective_click(const SegmentationResult& result, const SceneData& scene,
                                           const ClickSet& clicks, const EvalProtocol& protocol = {});

/// Corrective click for a specific instance (nullopt if it has no errors).
std::optional<Click> corrective_click_for(const SegmentationResult& result, const SceneData& scene,
                                          const ClickSet& clicks, int instance,
                                          const EvalProtocol& protocol = {});

using Segmenter = std::function<SegmentationResult(const ClickSet&)>;

/// One click per instance placed by the corrective rule on an empty prediction.
ClickSet initial_clicks(const SceneData& scene, const EvalProtocol& protocol = {});

struct ScheduleRun {
  std::vector<double> miou;                 // per schedule entry
  std::vector<SegmentationResult> results;  // per schedule entry
  std::vector<ClickSet> clicks;             // per schedule entry
};

/// Per-instance corrective rounds up to the largest scheduled click count.
ScheduleRun run_schedule(const SceneData& scene, const Segmenter& segment,
                         const EvalProtocol& protocol);

/// Total clicks (initial ones included) until scene mIoU >= target, capped.
int noc(const SceneData& scene, const Segmenter& segment, double target, int cap = 20,
        const EvalProtocol& protocol = {});

struct SceneMetrics {
  std::string id;
  std::vector<double> miou;  // per schedule entry
  double macc = 0.0;
  std::vector<int> noc;      // per NoC target
  std::vector<ClickSet> click_log;
};

struct MetricsReport {
  EvalProtocol protocol;
  std::vector<SceneMetrics> scenes;
  std::vector<double> miou;  // aggregate per schedule entry
  double macc = 0.0;
  double map25 = 0.0;
  double map50 = 0.0;
  std::vector<double> noc;   // mean per NoC target

  nlohmann::json to_json() const;
  std::string to_table() const;
  std::string plot_csv() const;  // clicks,miou
};

/// Evaluates every scene. `make_segmenter` returns the segmenter for a scene.
/// mACC and mAP use the results at the first scheduled click count.
MetricsReport evaluate(const std::vector<SceneData>& scenes,
                       const std::function<Segmenter(const SceneData&)>& make_segmenter,
                       const EvalProtocol& protocol);

}  // namespace clickseg
