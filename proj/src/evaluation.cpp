// SPDX-License-Identifier: Apache-2.0

#include "clickseg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "clickseg/geometry.hpp"

namespace clickseg {

using nlohmann::json;

namespace {

/// Group already used by clicks of `instance`, if any.
std::optional<int> group_of(const SceneData& scene, const ClickSet& clicks, int instance) {
  for (const Click& c : clicks.clicks) {
    int inst = c.source_instance;
    if (inst < 0 && c.point_index >= 0 &&
        static_cast<std::size_t>(c.point_index) < scene.instance_ids.size())
      inst = scene.instance_ids[static_cast<std::size_t>(c.point_index)];
    if (inst == instance) return c.group;
  }
  return std::nullopt;
}

int fresh_group(const ClickSet& clicks) {
  int g = -1;
  for (const Click& c : clicks.clicks) g = std::max(g, c.group);
  return g + 1;
}

void require_aligned(const SegmentationResult& r, const SceneData& scene) {
  if (!scene.has_ground_truth()) throw Error("evaluation needs ground truth");
  if (r.point_instance.size() != scene.instance_ids.size())
    throw Error("result and ground truth differ in length");
}

/// Connected components of `pts` (indices into positions) under a radius graph.
std::vector<std::vector<int>> components(const std::vector<Vec3>& positions,
                                         const std::vector<int>& pts, double radius) {
  const double r2 = radius * radius;
  std::vector<int> comp(pts.size(), -1);
  std::vector<std::vector<int>> out;
  for (std::size_t s = 0; s < pts.size(); ++s) {
    if (comp[s] >= 0) continue;
    const int id = static_cast<int>(out.size());
    out.emplace_back();
    std::vector<std::size_t> stack{s};
    comp[s] = id;
    while (!stack.empty()) {
      const std::size_t a = stack.back();
      stack.pop_back();
      out.back().push_back(pts[a]);
      for (std::size_t b = 0; b < pts.size(); ++b) {
        if (comp[b] >= 0) continue;
        if (sq_dist(positions[static_cast<std::size_t>(pts[a])], positions[static_cast<std::size_t>(pts[b])]) <= r2) {
          comp[b] = id;
          stack.push_back(b);
        }
      }
    }
    std::sort(out.back().begin(), out.back().end());
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

void EvalProtocol::validate() const {
  if (schedule.empty()) throw Error("click schedule must not be empty");
  if (schedule.front() < 1) throw Error("click schedule entries must be positive");
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (schedule[i] <= schedule[i - 1]) throw Error("click schedule must be strictly increasing");
  if (max_clicks < schedule.back()) throw Error("click cap must be at least the largest schedule entry");
  for (double t : noc_targets)
    if (!(t > 0 && t < 1)) throw Error("NoC targets must lie in (0, 1)");
  if (!(component_radius > 0)) throw Error("component radius must be positive");
}

double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw Error("iou: length mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> instance_list(const SceneData& scene) {
  std::set<int> s;
  for (int id : scene.instance_ids)
    if (id >= 0) s.insert(id);
  return {s.begin(), s.end()};
}

int instance_class(const SceneData& scene, int instance) {
  for (std::size_t j = 0; j < scene.instance_ids.size(); ++j)
    if (scene.instance_ids[j] == instance) return scene.class_ids.empty() ? 0 : scene.class_ids[j];
  throw Error("unknown instance " + std::to_string(instance));
}

std::vector<InstanceScore> instance_ious(const SegmentationResult& r, const SceneData& scene,
                                         const ClickSet& clicks) {
  require_aligned(r, scene);
  std::vector<InstanceScore> out;
  const std::size_t n = scene.instance_ids.size();
  for (int inst : instance_list(scene)) {
    const auto g = group_of(scene, clicks, inst);
    std::vector<std::uint8_t> pred(n, 0), gt(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
      gt[j] = scene.instance_ids[j] == inst;
      pred[j] = g && r.point_instance[j] == *g;
    }
    out.push_back({inst, instance_class(scene, inst), iou(pred, gt)});
  }
  return out;
}

double class_mean_iou(const std::vector<InstanceScore>& scores) {
  std::map<int, std::vector<double>> per_class;
  for (const auto& s : scores) per_class[s.cls].push_back(s.iou);
  std::vector<double> means;
  for (const auto& [c, v] : per_class) means.push_back(mean_of(v));
  return mean_of(means);
}

double scene_miou(const SegmentationResult& r, const SceneData& scene, const ClickSet& clicks) {
  return class_mean_iou(instance_ious(r, scene, clicks));
}

double mean_class_accuracy(const SegmentationResult& r, const SceneData& scene) {
  require_aligned(r, scene);
  std::map<int, std::pair<std::size_t, std::size_t>> acc;  // class -> (correct, total)
  for (std::size_t j = 0; j < scene.instance_ids.size(); ++j) {
    if (scene.instance_ids[j] < 0) continue;
    auto& a = acc[scene.class_ids[j]];
    a.second++;
    a.first += r.point_class[j] == scene.class_ids[j];
  }
  std::vector<double> v;
  for (const auto& [c, a] : acc) v.push_back(static_cast<double>(a.first) / static_cast<double>(a.second));
  return mean_of(v);
}

double map_at(const std::vector<Prediction>& preds, const std::vector<GtInstance>& gt,
              double threshold) {
  if (!(threshold > 0 && threshold < 1)) throw Error("mAP threshold must lie in (0, 1)");
  std::set<int> classes;
  for (const auto& g : gt) classes.insert(g.cls);
  std::vector<double> aps;
  for (int c : classes) {
    std::vector<std::size_t> gts, ps;
    for (std::size_t i = 0; i < gt.size(); ++i)
      if (gt[i].cls == c) gts.push_back(i);
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (preds[i].cls == c) ps.push_back(i);
    std::stable_sort(ps.begin(), ps.end(), [&](std::size_t a, std::size_t b) {
      return preds[a].confidence > preds[b].confidence;
    });
    std::vector<bool> matched(gts.size(), false);
    std::vector<double> prec, rec;
    std::size_t tp = 0, fp = 0;
    for (std::size_t p : ps) {
      double best = -1.0;
      std::size_t best_g = 0;
      for (std::size_t gi = 0; gi < gts.size(); ++gi) {
        const auto& g = gt[gts[gi]];
        if (matched[gi] || g.scene != preds[p].scene || g.mask.size() != preds[p].mask.size()) continue;
        const double v = iou(preds[p].mask, g.mask);
        if (v >= threshold && v > best) {
          best = v;
          best_g = gi;
        }
      }
      if (best >= 0) {
        matched[best_g] = true;
        ++tp;
      } else {
        ++fp;
      }
      prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
      rec.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
    }
    // All-point interpolation: precision envelope integrated over recall.
    double ap = 0.0, prev_r = 0.0;
    for (std::size_t i = 0; i < prec.size(); ++i) {
      if (rec[i] <= prev_r) continue;
      double pmax = 0.0;
      for (std::size_t k = i; k < prec.size(); ++k) pmax = std::max(pmax, prec[k]);
      ap += (rec[i] - prev_r) * pmax;
      prev_r = rec[i];
    }
    aps.push_back(ap);
  }
  return mean_of(aps);
}

std::vector<Prediction> predictions_from(const SegmentationResult& r, std::size_t scene) {
  std::vector<Prediction> out;
  for (std::size_t g = 0; g < r.groups.size(); ++g) {
    Prediction p;
    p.mask.resize(r.point_instance.size());
    for (std::size_t j = 0; j < p.mask.size(); ++j) p.mask[j] = r.point_instance[j] == r.groups[g];
    p.cls = r.group_class[g];
    p.confidence = r.group_confidence[g];
    p.scene = scene;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<GtInstance> gt_instances(const SceneData& scene, std::size_t scene_index) {
  std::vector<GtInstance> out;
  for (int inst : instance_list(scene)) {
    GtInstance g;
    g.mask.resize(scene.instance_ids.size());
    for (std::size_t j = 0; j < g.mask.size(); ++j) g.mask[j] = scene.instance_ids[j] == inst;
    g.cls = instance_class(scene, inst);
    g.scene = scene_index;
    out.push_back(std::move(g));
  }
  return out;
}

std::optional<Click> corrective_click_for(const SegmentationResult& r, const SceneData& scene,
                                          const ClickSet& clicks, int instance,
                                          const EvalProtocol& protocol) {
  require_aligned(r, scene);
  const auto g = group_of(scene, clicks, instance);
  const auto& pos = scene.cloud.positions;
  const std::size_t n = pos.size();
  std::vector<int> errors;
  std::vector<std::uint8_t> in_error(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    if (scene.instance_ids[j] != instance) continue;
    if (!g || r.point_instance[j] != *g) {
      errors.push_back(static_cast<int>(j));
      in_error[j] = 1;
    }
  }
  if (errors.empty()) return std::nullopt;

  std::vector<int> candidates = errors;
  if (protocol.connected_components) {
    auto comps = components(pos, errors, protocol.component_radius);
    std::size_t best = 0;
    for (std::size_t c = 1; c < comps.size(); ++c)
      if (comps[c].size() > comps[best].size()) best = c;
    candidates = comps[best];
  }
  std::vector<std::uint8_t> is_candidate(n, 0);
  for (int j : candidates) is_candidate[static_cast<std::size_t>(j)] = 1;

  // Reference: correctly labelled points of this instance, else everything
  // outside the candidate region.
  std::vector<Vec3> ref;
  for (std::size_t j = 0; j < n; ++j)
    if (scene.instance_ids[j] == instance && !in_error[j]) ref.push_back(pos[j]);
  if (ref.empty())
    for (std::size_t j = 0; j < n; ++j)
      if (!is_candidate[j]) ref.push_back(pos[j]);

  int pick = candidates.front();
  if (!ref.empty()) {
    const SpatialIndex index(ref);
    double best = -1.0;
    for (int j : candidates) {
      const double d = sq_dist(pos[static_cast<std::size_t>(j)],
                               ref[static_cast<std::size_t>(index.nearest(pos[static_cast<std::size_t>(j)]))]);
      if (d > best) {
        best = d;
        pick = j;
      }
    }
  }
  Click c;
  c.position = pos[static_cast<std::size_t>(pick)];
  c.point_index = pick;
  c.source_instance = instance;
  c.group = g ? *g : fresh_group(clicks);
  return c;
}

std::optional<Click> next_corrective_click(const SegmentationResult& r, const SceneData& scene,
                                           const ClickSet& clicks, const EvalProtocol& protocol) {
  require_aligned(r, scene);
  int best_inst = -1;
  std::size_t best_count = 0;
  for (int inst : instance_list(scene)) {
    const auto g = group_of(scene, clicks, inst);
    std::size_t count = 0;
    for (std::size_t j = 0; j < scene.instance_ids.size(); ++j)
      if (scene.instance_ids[j] == inst && (!g || r.point_instance[j] != *g)) ++count;
    if (count > best_count) {
      best_count = count;
      best_inst = inst;
    }
  }
  if (best_inst < 0) return std::nullopt;
  return corrective_click_for(r, scene, clicks, best_inst, protocol);
}

ClickSet initial_clicks(const SceneData& scene, const EvalProtocol& protocol) {
  SegmentationResult empty;
  empty.point_instance.assign(scene.instance_ids.size(), -1);
  empty.point_class.assign(scene.instance_ids.size(), -1);
  ClickSet clicks;
  for (int inst : instance_list(scene)) {
    auto c = corrective_click_for(empty, scene, clicks, inst, protocol);
    if (c) clicks.clicks.push_back(*c);
  }
  return clicks;
}

ScheduleRun run_schedule(const SceneData& scene, const Segmenter& segment,
                         const EvalProtocol& protocol) {
  protocol.validate();
  ScheduleRun run;
  ClickSet clicks = initial_clicks(scene, protocol);
  if (clicks.empty()) throw Error("scene has no ground-truth instances");
  SegmentationResult result = segment(clicks);
  const int max_n = protocol.schedule.back();
  std::size_t next = 0;
  for (int round = 1; round <= max_n; ++round) {
    if (round == protocol.schedule[next]) {
      run.miou.push_back(scene_miou(result, scene, clicks));
      run.results.push_back(result);
      run.clicks.push_back(clicks);
      ++next;
    }
    if (round == max_n) break;
    bool added = false;
    const ClickSet before = clicks;
    for (int inst : instance_list(scene)) {
      auto c = corrective_click_for(result, scene, before, inst, protocol);
      if (c) {
        clicks.clicks.push_back(*c);
        added = true;
      }
    }
    if (added) result = segment(clicks);
  }
  return run;
}

int noc(const SceneData& scene, const Segmenter& segment, double target, int cap,
        const EvalProtocol& protocol) {
  if (!(target > 0 && target < 1)) throw Error("NoC target must lie in (0, 1)");
  if (cap < 1) throw Error("NoC cap must be positive");
  ClickSet clicks = initial_clicks(scene, protocol);
  if (clicks.empty()) throw Error("scene has no ground-truth instances");
  int count = static_cast<int>(clicks.size());
  SegmentationResult result = segment(clicks);
  while (scene_miou(result, scene, clicks) < target) {
    if (count >= cap) return cap;
    auto c = next_corrective_click(result, scene, clicks, protocol);
    if (!c) return cap;
    clicks.clicks.push_back(*c);
    ++count;
    result = segment(clicks);
  }
  return std::min(count, cap);
}

MetricsReport evaluate(const std::vector<SceneData>& scenes,
                       const std::function<Segmenter(const SceneData&)>& make_segmenter,
                       const EvalProtocol& protocol) {
  protocol.validate();
  MetricsReport rep;
  rep.protocol = protocol;
  rep.miou.assign(protocol.schedule.size(), 0.0);
  rep.noc.assign(protocol.noc_targets.size(), 0.0);
  std::vector<Prediction> preds;
  std::vector<GtInstance> gts;
  std::vector<double> maccs;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const SceneData& scene = scenes[s];
    const Segmenter seg = make_segmenter(scene);
    ScheduleRun run = run_schedule(scene, seg, protocol);
    SceneMetrics m;
    m.id = scene.cloud.id;
    m.miou = run.miou;
    m.macc = mean_class_accuracy(run.results.front(), scene);
    for (double t : protocol.noc_targets) m.noc.push_back(noc(scene, seg, t, protocol.max_clicks, protocol));
    m.click_log = std::move(run.clicks);
    auto p = predictions_from(run.results.front(), s);
    preds.insert(preds.end(), p.begin(), p.end());
    auto g = gt_instances(scene, s);
    gts.insert(gts.end(), g.begin(), g.end());
    for (std::size_t i = 0; i < m.miou.size(); ++i) rep.miou[i] += m.miou[i];
    for (std::size_t i = 0; i < m.noc.size(); ++i) rep.noc[i] += m.noc[i];
    maccs.push_back(m.macc);
    rep.scenes.push_back(std::move(m));
  }
  if (!scenes.empty()) {
    const double inv = 1.0 / static_cast<double>(scenes.size());
    for (auto& v : rep.miou) v *= inv;
    for (auto& v : rep.noc) v *= inv;
  }
  rep.macc = mean_of(maccs);
  rep.map25 = map_at(preds, gts, 0.25);
  rep.map50 = map_at(preds, gts, 0.5);
  return rep;
}

json MetricsReport::to_json() const {
  json scenes_doc = json::array();
  for (const auto& s : scenes) {
    json logs = json::array();
    for (const auto& cs : s.click_log) {
      json l = json::array();
      for (const auto& c : cs.clicks)
        l.push_back({{"x", c.position[0]}, {"y", c.position[1]}, {"z", c.position[2]},
                     {"group", c.group}, {"instance", c.source_instance}, {"point", c.point_index}});
      logs.push_back(l);
    }
    scenes_doc.push_back({{"id", s.id}, {"miou", s.miou}, {"macc", s.macc}, {"noc", s.noc},
                          {"clicks", logs}});
  }
  json agg = {{"schedule", protocol.schedule}, {"miou", miou},   {"macc", macc},
              {"map25", map25},                {"map50", map50}, {"noc_targets", protocol.noc_targets},
              {"noc", noc},                    {"max_clicks", protocol.max_clicks}};
  return {{"aggregate", agg}, {"scenes", scenes_doc}};
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "scenes: " << scenes.size() << "\n";
  for (std::size_t i = 0; i < protocol.schedule.size(); ++i)
    os << "mIoU@" << protocol.schedule[i] << "\t" << miou[i] << "\n";
  os << "mACC\t" << macc << "\n";
  os << "mAP@0.25\t" << map25 << "\n";
  os << "mAP@0.5\t" << map50 << "\n";
  for (std::size_t i = 0; i < protocol.noc_targets.size(); ++i)
    os << "NoC@" << static_cast<int>(std::lround(protocol.noc_targets[i] * 100)) << "\t" << noc[i] << "\n";
  return os.str();
}

std::string MetricsReport::plot_csv() const {
  std::ostringstream os;
  os << "clicks,miou\n" << std::setprecision(10);
  for (std::size_t i = 0; i < protocol.schedule.size(); ++i)
    os << protocol.schedule[i] << "," << miou[i] << "\n";
  return os.str();
}

}  // namespace clickseg
