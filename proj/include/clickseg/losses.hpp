// SPDX-License-Identifier: Apache-2.0
//
// Mask and class losses with click-anchored supervision: every query is bound
// to the ground-truth instance of the click that generated it.
#pragma once

#include <cstdint>
#include <vector>

#include "clickseg/decoder.hpp"
#include "clickseg/types.hpp"

namespace clickseg {

struct LossWeights {
  double bce = 1.0;
  double dice = 1.0;
  double ce = 1.0;
  double eps = 1e-6;           // Dice smoothing
  bool bce_per_query = false;  // average per query first instead of over all N x K

  void validate() const;
};

/// Per-query binary masks (N x K, row-major) and class targets.
struct SupervisionTargets {
  std::size_t points = 0;
  std::size_t queries = 0;
  std::vector<std::uint8_t> mask;  // mask[j * queries + k]
  std::vector<int> classes;        // per query

  std::uint8_t at(std::size_t j, std::size_t k) const { return mask[j * queries + k]; }
};

/// Builds targets from ground truth. A click's instance is its source_instance,
/// or the instance of its snapped point when the source is unknown.
SupervisionTargets build_targets(std::span<const int> instance_ids, std::span<const int> class_ids,
                                 const ClickSet& clicks);

/// Binary cross entropy averaged over all N x K entries. When `grad` is given
/// it receives d loss / d logits.
template <class T>
double bce_loss(const Tensor<T>& logits, const SupervisionTargets& targets,
                Tensor<T>* grad = nullptr, bool per_query = false);

/// Soft Dice loss averaged over queries.
template <class T>
double dice_loss(const Tensor<T>& logits, const SupervisionTargets& targets, double eps,
                 Tensor<T>* grad = nullptr);

/// Softmax cross entropy over each column of the N_c x K class logits,
/// averaged over queries.
template <class T>
double ce_loss(const Tensor<T>& class_logits, const SupervisionTargets& targets,
               Tensor<T>* grad = nullptr);

struct LossBreakdown {
  std::vector<double> bce, dice, ce;  // per stage, unweighted
  double total = 0.0;

  double mean_bce() const;
  double mean_dice() const;
  double mean_ce() const;
};

/// Mean over stages of the weighted sum of the three terms.
template <class T>
LossBreakdown total_loss(const std::vector<StageOutput<T>>& stages,
                         const SupervisionTargets& targets, const LossWeights& weights,
                         std::vector<StageGrads<T>>* grads = nullptr);

}  // namespace clickseg
