// SPDX-License-Identifier: Apache-2.0

#include "clickseg/losses.hpp"

#include <cmath>
#include <numeric>

namespace clickseg {

namespace {

constexpr double kProbLo = 1e-7;
constexpr double kProbHi = 1.0 - 1e-7;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_mask_shape(std::size_t rows, std::size_t cols, const SupervisionTargets& t) {
  if (rows != t.points || cols != t.queries) throw Error("loss: logits do not match targets");
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

void LossWeights::validate() const {
  if (!(bce >= 0) || !(dice >= 0) || !(ce >= 0)) throw Error("loss weights must be non-negative");
  if (!(eps > 0)) throw Error("Dice epsilon must be positive");
}

SupervisionTargets build_targets(std::span<const int> instance_ids, std::span<const int> class_ids,
                                 const ClickSet& clicks) {
  if (instance_ids.size() != class_ids.size()) throw Error("instance and class ids differ in length");
  SupervisionTargets t;
  t.points = instance_ids.size();
  t.queries = clicks.size();
  t.mask.assign(t.points * t.queries, 0);
  t.classes.assign(t.queries, 0);
  for (std::size_t k = 0; k < t.queries; ++k) {
    const Click& c = clicks.clicks[k];
    int inst = c.source_instance;
    if (inst < 0 && c.point_index >= 0 && static_cast<std::size_t>(c.point_index) < t.points)
      inst = instance_ids[static_cast<std::size_t>(c.point_index)];
    if (inst < 0) throw Error("click has no ground-truth instance");
    int cls = -1;
    for (std::size_t j = 0; j < t.points; ++j) {
      if (instance_ids[j] != inst) continue;
      t.mask[j * t.queries + k] = 1;
      if (cls < 0) cls = class_ids[j];
    }
    if (cls < 0) throw Error("click instance has no points or no class");
    t.classes[k] = cls;
  }
  return t;
}

template <class T>
double bce_loss(const Tensor<T>& logits, const SupervisionTargets& t, Tensor<T>* grad,
                bool per_query) {
  check_mask_shape(logits.rows(), logits.cols(), t);
  const std::size_t n = t.points, k = t.queries;
  if (grad) *grad = Tensor<T>(n, k);
  if (n == 0 || k == 0) return 0.0;
  // Both normalizations weight every entry by 1 / (N K); per-query averaging
  // only changes the summation order.
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(k));
  std::vector<double> col(k, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t q = 0; q < k; ++q) {
      const double z = static_cast<double>(logits(j, q));
      const double s = sig(z);
      const double p = std::clamp(s, kProbLo, kProbHi);
      const double m = t.at(j, q);
      col[q] -= m * std::log(p) + (1.0 - m) * std::log(1.0 - p);
      if (grad) {
        // d/dz of the clamped loss; zero where the clamp is active.
        const bool clamped = s <= kProbLo || s >= kProbHi;
        (*grad)(j, q) = clamped ? T(0) : static_cast<T>((s - m) * scale);
      }
    }
  }
  double total = 0.0;
  if (per_query) {
    for (double c : col) total += c / static_cast<double>(n);
    return total / static_cast<double>(k);
  }
  for (double c : col) total += c;
  return total * scale;
}

template <class T>
double dice_loss(const Tensor<T>& logits, const SupervisionTargets& t, double eps,
                 Tensor<T>* grad) {
  check_mask_shape(logits.rows(), logits.cols(), t);
  if (!(eps > 0)) throw Error("Dice epsilon must be positive");
  const std::size_t n = t.points, k = t.queries;
  if (grad) *grad = Tensor<T>(n, k);
  if (k == 0) return 0.0;
  double total = 0.0;
  for (std::size_t q = 0; q < k; ++q) {
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = sig(static_cast<double>(logits(j, q)));
      const double m = t.at(j, q);
      inter += p * m;
      psum += p;
      gsum += m;
    }
    const double num = 2.0 * inter + eps;
    const double den = psum + gsum + eps;
    total += 1.0 - num / den;
    if (grad) {
      const double inv_k = 1.0 / static_cast<double>(k);
      for (std::size_t j = 0; j < n; ++j) {
        const double p = sig(static_cast<double>(logits(j, q)));
        const double m = t.at(j, q);
        const double dp = -(2.0 * m * den - num) / (den * den);
        (*grad)(j, q) = static_cast<T>(dp * p * (1.0 - p) * inv_k);
      }
    }
  }
  return total / static_cast<double>(k);
}

template <class T>
double ce_loss(const Tensor<T>& z, const SupervisionTargets& t, Tensor<T>* grad) {
  if (z.cols() != t.queries) throw Error("loss: class logits do not match targets");
  const std::size_t nc = z.rows(), k = t.queries;
  if (grad) *grad = Tensor<T>(nc, k);
  if (k == 0) return 0.0;
  if (nc == 0) throw Error("class logits are empty");
  double total = 0.0;
  std::vector<double> p(nc);
  for (std::size_t q = 0; q < k; ++q) {
    const int gt = t.classes[q];
    if (gt < 0 || static_cast<std::size_t>(gt) >= nc) throw Error("ground-truth class out of range");
    double mx = static_cast<double>(z(0, q));
    for (std::size_t c = 1; c < nc; ++c) mx = std::max(mx, static_cast<double>(z(c, q)));
    double sum = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      p[c] = std::exp(static_cast<double>(z(c, q)) - mx);
      sum += p[c];
    }
    total += -(static_cast<double>(z(static_cast<std::size_t>(gt), q)) - mx - std::log(sum));
    if (grad) {
      for (std::size_t c = 0; c < nc; ++c) {
        const double pc = p[c] / sum - (static_cast<int>(c) == gt ? 1.0 : 0.0);
        (*grad)(c, q) = static_cast<T>(pc / static_cast<double>(k));
      }
    }
  }
  return total / static_cast<double>(k);
}

double LossBreakdown::mean_bce() const { return mean(bce); }
double LossBreakdown::mean_dice() const { return mean(dice); }
double LossBreakdown::mean_ce() const { return mean(ce); }

template <class T>
LossBreakdown total_loss(const std::vector<StageOutput<T>>& stages,
                         const SupervisionTargets& targets, const LossWeights& w,
                         std::vector<StageGrads<T>>* grads) {
  w.validate();
  LossBreakdown out;
  if (stages.empty()) return out;
  const double inv_s = 1.0 / static_cast<double>(stages.size());
  if (grads) grads->assign(stages.size(), {});
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    Tensor<T> gb, gd, gc;
    const bool g = grads != nullptr;
    out.bce.push_back(bce_loss(st.mask_logits, targets, g ? &gb : nullptr, w.bce_per_query));
    out.dice.push_back(dice_loss(st.mask_logits, targets, w.eps, g ? &gd : nullptr));
    out.ce.push_back(ce_loss(st.class_logits, targets, g ? &gc : nullptr));
    out.total += inv_s * (w.bce * out.bce.back() + w.dice * out.dice.back() + w.ce * out.ce.back());
    if (g) {
      auto& sg = (*grads)[s];
      sg.mask_logits = Tensor<T>(gb.rows(), gb.cols());
      for (std::size_t i = 0; i < gb.size(); ++i)
        sg.mask_logits.data()[i] = static_cast<T>(
            inv_s * (w.bce * static_cast<double>(gb.data()[i]) + w.dice * static_cast<double>(gd.data()[i])));
      sg.class_logits = Tensor<T>(gc.rows(), gc.cols());
      for (std::size_t i = 0; i < gc.size(); ++i)
        sg.class_logits.data()[i] = static_cast<T>(inv_s * w.ce * static_cast<double>(gc.data()[i]));
    }
  }
  return out;
}

#define CLICKSEG_INSTANTIATE(T)                                                                   \
  template double bce_loss<T>(const Tensor<T>&, const SupervisionTargets&, Tensor<T>*, bool);     \
  template double dice_loss<T>(const Tensor<T>&, const SupervisionTargets&, double, Tensor<T>*);  \
  template double ce_loss<T>(const Tensor<T>&, const SupervisionTargets&, Tensor<T>*);            \
  template LossBreakdown total_loss<T>(const std::vector<StageOutput<T>>&,                        \
                                       const SupervisionTargets&, const LossWeights&,             \
                                       std::vector<StageGrads<T>>*);

CLICKSEG_INSTANTIATE(float)
CLICKSEG_INSTANTIATE(double)
#undef CLICKSEG_INSTANTIATE

}  // namespace clickseg
