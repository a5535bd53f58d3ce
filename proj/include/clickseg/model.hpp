// SPDX-License-Identifier: Apache-2.0
//
// The complete network: scene preparation (normalization, optional voxel
// reduction, encoder geometry, spatial index), the encoder/decoder pair sharing
// one parameter store, the loss, and checkpoint I/O.
#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "clickseg/decoder.hpp"
#include "clickseg/losses.hpp"
#include "json.hpp"

namespace clickseg {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  LossWeights loss;
  std::size_t query_k = 1;        // F^L rows averaged per click
  std::size_t max_points = 4096;  // larger scenes are voxel-reduced before the network
  std::uint64_t seed = 1;         // parameter initialization
  std::string version = "clickseg-1";

  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& doc);

/// A reduced configuration for tests and quick experiments.
ModelConfig small_model_config();

/// Parameter-independent per-scene state. When the scene has more than
/// max_points points it is voxel-reduced; `point_map` then sends every input
/// point to the reduced point that represents it.
struct PreparedScene {
  NormalizationTransform transform;
  std::vector<Vec3> positions;  // normalized (possibly reduced)
  Tensor<double> attributes;
  EncoderGeometry geometry;
  std::shared_ptr<const SpatialIndex> index;
  std::vector<int> point_map;   // empty = identity
  std::size_t input_size = 0;

  std::size_t size() const { return positions.size(); }
  bool reduced() const { return !point_map.empty(); }
};

PreparedScene prepare_scene(const PointCloud& cloud, const ModelConfig& cfg);

template <class T>
struct ForwardState {
  EncoderCache<T> encoder;
  DecoderCache<T> decoder;
  MultiScaleFeatures<T> features;
  QueryFeatures<T> queries;
  std::vector<StageOutput<T>> stages;
};

template <class T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }

  /// Query rows for clicks given in input (unnormalized) coordinates.
  QueryFeatures<T> lookup(const PreparedScene& scene, const MultiScaleFeatures<T>& feats,
                          const ClickSet& clicks) const;

  /// One encoder pass and one full decode. `state` keeps what backward needs.
  std::vector<StageOutput<T>> forward(const PreparedScene& scene, const ClickSet& clicks,
                                      ForwardState<T>* state = nullptr) const;

  /// Accumulates parameter gradients for d loss / d stage outputs.
  void backward(const PreparedScene& scene, const ForwardState<T>& state,
                const std::vector<StageGrads<T>>& grads);

  /// Forward, loss and backward; gradients accumulate into params().
  LossBreakdown loss_and_grad(const PreparedScene& scene, const ClickSet& clicks,
                              const SupervisionTargets& targets);

  double loss(const PreparedScene& scene, const ClickSet& clicks,
              const SupervisionTargets& targets) const;

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

  /// Copy with another scalar type (same config and values).
  template <class U>
  Model<U> cast() const {
    Model<U> out(cfg_);
    out.params().assign_from(params_);
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  Encoder encoder_;
  Decoder decoder_;
};

}  // namespace clickseg
