// SPDX-License-Identifier: Apache-2.0

#include "clickseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace clickseg {

namespace {

/// Softmax of one logit column; returns (arg-max class, its probability).
template <class T>
std::pair<int, double> column_class(const Tensor<T>& z, std::size_t q) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < z.rows(); ++c)
    if (z(c, q) > z(best, q)) best = c;
  const double mx = static_cast<double>(z(best, q));
  double sum = 0.0;
  for (std::size_t c = 0; c < z.rows(); ++c) sum += std::exp(static_cast<double>(z(c, q)) - mx);
  return {static_cast<int>(best), 1.0 / sum};
}

}  // namespace

std::vector<std::pair<int, std::vector<int>>> group_members(const ClickSet& clicks) {
  std::map<int, std::vector<int>> m;
  for (std::size_t k = 0; k < clicks.size(); ++k) m[clicks.clicks[k].group].push_back(static_cast<int>(k));
  return {m.begin(), m.end()};
}

template <class T>
SegmentationResult finalize(const StageOutput<T>& st, const ClickSet& clicks) {
  const Tensor<T>& m = st.mask_logits;
  const std::size_t n = m.rows(), k = m.cols();
  if (k != clicks.size()) throw Error("finalize: mask columns do not match clicks");
  if (st.class_logits.cols() != k || st.class_logits.rows() == 0)
    throw Error("finalize: class logits do not match clicks");
  SegmentationResult r;
  std::vector<int> qclass(k);
  std::vector<double> qconf(k);
  for (std::size_t q = 0; q < k; ++q) std::tie(qclass[q], qconf[q]) = column_class(st.class_logits, q);

  for (const auto& [g, members] : group_members(clicks)) {
    int best = members.front();
    for (int q : members)
      if (qconf[q] > qconf[best]) best = q;
    r.groups.push_back(g);
    r.group_class.push_back(qclass[best]);
    r.group_confidence.push_back(qconf[best]);
  }
  r.point_instance.assign(n, -1);
  r.point_class.assign(n, -1);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t best = 0;
    for (std::size_t q = 1; q < k; ++q)
      if (m(j, q) > m(j, best)) best = q;
    if (!(m(j, best) >= T(0))) continue;
    r.point_instance[j] = clicks.clicks[best].group;
    r.point_class[j] = qclass[best];
  }
  return r;
}

ClickSet snap_clicks(const SpatialIndex& index, const ClickSet& clicks) {
  ClickSet out = clicks;
  for (Click& c : out.clicks) {
    const int j = index.nearest(c.position);
    c.point_index = j;
    c.position = index.points()[static_cast<std::size_t>(j)];
  }
  return out;
}

ClickSet snap_clicks(const PointCloud& scene, const ClickSet& clicks) {
  return snap_clicks(SpatialIndex(scene), clicks);
}

ClickSet unique_clicks(const ClickSet& clicks) {
  ClickSet out;
  for (const auto& c : clicks.clicks) {
    const bool seen = std::any_of(out.clicks.begin(), out.clicks.end(), [&](const Click& o) {
      return o.group == c.group && o.position == c.position;
    });
    if (!seen) out.clicks.push_back(c);
  }
  return out;
}

template <class T>
SegmentationResult segment(const PreparedScene& scene, const ClickSet& clicks,
                           const Model<T>& model) {
  if (clicks.empty()) throw Error("at least one click required");
  const ClickSet unique = unique_clicks(clicks);
  const auto stages = model.forward(scene, unique);
  SegmentationResult r = finalize(stages.back(), unique);
  if (scene.reduced()) {
    SegmentationResult full = r;
    full.point_instance.assign(scene.input_size, -1);
    full.point_class.assign(scene.input_size, -1);
    for (std::size_t i = 0; i < scene.input_size; ++i) {
      const auto p = static_cast<std::size_t>(scene.point_map[i]);
      full.point_instance[i] = r.point_instance[p];
      full.point_class[i] = r.point_class[p];
    }
    return full;
  }
  return r;
}

template <class T>
SegmentationResult segment(const PointCloud& scene, const ClickSet& clicks, const Model<T>& model) {
  if (clicks.empty()) throw Error("at least one click required");
  return segment(prepare_scene(scene, model.config()), clicks, model);
}

template SegmentationResult finalize<float>(const StageOutput<float>&, const ClickSet&);
template SegmentationResult finalize<double>(const StageOutput<double>&, const ClickSet&);
template SegmentationResult segment<float>(const PointCloud&, const ClickSet&, const Model<float>&);
template SegmentationResult segment<double>(const PointCloud&, const ClickSet&, const Model<double>&);
template SegmentationResult segment<float>(const PreparedScene&, const ClickSet&, const Model<float>&);
template SegmentationResult segment<double>(const PreparedScene&, const ClickSet&,
                                            const Model<double>&);

}  // namespace clickseg
