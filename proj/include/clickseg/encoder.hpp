// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical point encoder. Level 0 runs a point-wise layer at full
// resolution; each coarser level voxel-pools the previous one and mean-pools a
// shared layer over (child offset, child feature). The full-resolution output
// map F^L concatenates every level (gathered through the parent maps) with a
// Fourier encoding of the point and projects it to the query dimension.
#pragma once

#include <memory>
#include <random>
#include <vector>

#include "clickseg/layers.hpp"
#include "clickseg/types.hpp"

namespace clickseg {

struct EncoderConfig {
  std::vector<std::size_t> dims{32, 64, 128, 256};
  std::vector<double> voxel_sizes{0.02, 0.05, 0.12, 0.3};  // normalized units
  std::size_t out_dim = 256;
  int pe_bands = 8;
  bool use_colors = false;
  Activation activation = Activation::gelu;

  std::size_t levels() const { return dims.size(); }
  std::size_t input_dim() const { return (use_colors ? 7 : 4) + 3; }
  void validate() const;
};

/// Parameter-independent structure of one normalized scene: the voxel
/// hierarchy, per-level child offsets and the full-resolution Fourier code.
struct EncoderGeometry {
  struct Level {
    std::vector<Vec3> positions;
    std::vector<std::vector<int>> children;  // empty for level 0
    std::vector<int> parent;                 // previous-level point -> this level
    Tensor<double> inputs;  // level 0: point inputs; else per child (offset / voxel)
  };
  std::vector<Level> levels;
  std::vector<std::vector<int>> ancestor;  // [level][full-res point] -> level index
  Tensor<double> pe;                       // N x 6B

  std::size_t size() const { return levels.front().positions.size(); }
};

/// `positions` must already be normalized; attributes may be empty.
EncoderGeometry build_encoder_geometry(std::span<const Vec3> positions,
                                       const Tensor<double>& attributes,
                                       const EncoderConfig& cfg);

/// Scales 0..L-1 are the internal levels; scale L is the full-resolution map.
template <class T>
struct MultiScaleFeatures {
  std::vector<const std::vector<Vec3>*> positions;
  std::vector<Tensor<T>> features;

  std::size_t scales() const { return features.size(); }
  const Tensor<T>& full() const { return features.back(); }
};

template <class T>
struct EncoderCache {
  std::vector<Tensor<T>> inputs;  // per level input rows
  std::vector<Tensor<T>> pre;     // per level pre-activation
  MlpCache<T> out;
};

class Encoder {
 public:
  Encoder() = default;
  template <class T>
  Encoder(ParamStore<T>& store, const EncoderConfig& cfg, std::mt19937_64& rng);

  const EncoderConfig& config() const { return cfg_; }

  template <class T>
  MultiScaleFeatures<T> forward(const ParamStore<T>& store, const EncoderGeometry& geo,
                                EncoderCache<T>* cache) const;

  /// d_features has one entry per scale (empty tensors are skipped).
  template <class T>
  void backward(ParamStore<T>& store, const EncoderGeometry& geo, const EncoderCache<T>& cache,
                std::vector<Tensor<T>> d_features) const;

 private:
  EncoderConfig cfg_;
  std::vector<Linear> level_layers_;
  Mlp out_;
};

}  // namespace clickseg
