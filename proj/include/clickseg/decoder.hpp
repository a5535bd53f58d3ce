// SPDX-License-Identifier: Apache-2.0
//
// Multi-stage mask decoder. Each stage refines the click queries with a
// transformer block (click-to-scene cross attention, click-to-click self
// attention, feed-forward; pre-norm residuals) and then a conditioned query
// adaptor that predicts masks and classes and folds spatial and semantic
// embeddings back into the queries.
#pragma once

#include <random>
#include <vector>

#include "clickseg/encoder.hpp"

namespace clickseg {

enum class MaskPooling { hard, soft };

struct DecoderConfig {
  std::size_t stages = 4;
  std::size_t dim = 256;
  std::size_t heads = 1;
  std::size_t ffn_dim = 512;
  std::size_t head_hidden = 256;   // hidden width of the mask/class/fusion MLPs
  std::size_t num_classes = 8;     // N_c
  std::size_t num_prototypes = 8;  // N_p >= N_c
  std::size_t prototype_dim = 256; // d_h
  int pe_bands = 8;
  bool query_pe = true;            // add the click Fourier code to attention inputs
  MaskPooling pooling = MaskPooling::hard;
  Activation activation = Activation::gelu;

  void validate() const;
};

/// Query features of K clicks (one row each) and the F^L rows they came from.
template <class T>
struct QueryFeatures {
  Tensor<T> q;                          // K x D
  std::vector<Vec3> positions;          // normalized click positions
  std::vector<std::vector<int>> rows;   // F^L rows averaged per click
};

/// Mean of the F^L rows listed per click (k nearest points).
template <class T>
QueryFeatures<T> encode_queries(const Tensor<T>& full_features, std::vector<Vec3> positions,
                                std::vector<std::vector<int>> rows);

template <class T>
struct StageOutput {
  Tensor<T> mask_logits;   // N x K
  Tensor<T> class_logits;  // N_c x K
  Tensor<T> q_t;           // K x D
  Tensor<T> q_a;           // K x D
};

template <class T>
struct StageGrads {
  Tensor<T> mask_logits;   // N x K (empty = zero)
  Tensor<T> class_logits;  // N_c x K (empty = zero)
};

template <class T>
struct BlockCache {
  Tensor<T> scene_in;  // stage scale features
  Tensor<T> qpe;
  LayerNormCache<T> ln_kv, ln1, ln2, ln3;
  MhaCache<T> c2s, c2c;
  MlpCache<T> ffn;
};

template <class T>
struct AdaptorCache {
  MlpCache<T> mask_mlp, class_mlp, fuse_mlp;
  Tensor<T> mask_kernel;   // phi_m(Q_t), K x D
  Tensor<T> class_kernel;  // phi_c(Q_t), K x d_h
  Tensor<T> pool_weights;  // N x K: 0/1 (hard) or sigmoid(M) (soft)
  std::vector<T> pool_norm;          // per query: count or weight sum
  Tensor<T> spatial;       // E_p, K x D
  std::vector<int> semantic_index;   // prototype row chosen per query
};

template <class T>
struct DecoderCache {
  std::vector<BlockCache<T>> blocks;
  std::vector<AdaptorCache<T>> adaptors;
  std::vector<Tensor<T>> stage_inputs;  // Q_a^{i-1}
};

class Decoder {
 public:
  Decoder() = default;
  template <class T>
  Decoder(ParamStore<T>& store, const DecoderConfig& cfg, const EncoderConfig& enc,
          std::mt19937_64& rng);

  const DecoderConfig& config() const { return cfg_; }

  /// Scale index consumed by a 0-based stage: coarsest internal level first,
  /// the full-resolution map at the last stage.
  std::size_t stage_scale(std::size_t stage, std::size_t scales) const;

  std::size_t prototypes_param() const { return prototypes_; }

  template <class T>
  Tensor<T> transformer_block(const ParamStore<T>& store, std::size_t stage, const Tensor<T>& q,
                              const Tensor<T>& scene, std::span<const Vec3> scene_pos,
                              std::span<const Vec3> click_pos, BlockCache<T>* cache) const;

  template <class T>
  Tensor<T> mask_head(const ParamStore<T>& store, const Tensor<T>& full, const Tensor<T>& q_t,
                      AdaptorCache<T>* cache) const;
  template <class T>
  Tensor<T> class_head(const ParamStore<T>& store, const Tensor<T>& q_t,
                       AdaptorCache<T>* cache) const;
  template <class T>
  Tensor<T> query_adapt(const ParamStore<T>& store, const Tensor<T>& q_t, const Tensor<T>& mask,
                        const Tensor<T>& cls, const Tensor<T>& full, AdaptorCache<T>* cache) const;

  /// Runs every stage. Throws if the encoder does not provide enough scales.
  template <class T>
  std::vector<StageOutput<T>> decode(const ParamStore<T>& store, const MultiScaleFeatures<T>& feats,
                                     const QueryFeatures<T>& queries,
                                     DecoderCache<T>* cache) const;

  /// Accumulates parameter gradients and returns per-scale feature gradients
  /// (index = scale; empty when unused) plus the gradient w.r.t. Q^0.
  template <class T>
  std::pair<std::vector<Tensor<T>>, Tensor<T>> backward(
      ParamStore<T>& store, const MultiScaleFeatures<T>& feats, const QueryFeatures<T>& queries,
      const std::vector<StageOutput<T>>& outputs, const DecoderCache<T>& cache,
      const std::vector<StageGrads<T>>& grads) const;

 private:
  struct Stage {
    Linear in_proj;
    LayerNorm ln_kv, ln1, ln2, ln3;
    MultiHeadAttention c2s, c2c;
    Mlp ffn;
  };

  template <class T>
  Tensor<T> block_backward(ParamStore<T>& store, std::size_t stage, const BlockCache<T>& c,
                           const Tensor<T>& d_qt, Tensor<T>& d_scene) const;

  template <class T>
  Tensor<T> adaptor_backward(ParamStore<T>& store, const Tensor<T>& full, const Tensor<T>& q_t,
                             const AdaptorCache<T>& c, const Tensor<T>* d_mask,
                             const Tensor<T>* d_cls, const Tensor<T>* d_qa,
                             Tensor<T>& d_full) const;

  DecoderConfig cfg_;
  std::vector<std::size_t> scene_dims_;  // per scale
  std::vector<Stage> stages_;
  Mlp mask_mlp_, class_mlp_, fuse_mlp_;
  std::size_t prototypes_ = 0;
};

}  // namespace clickseg
