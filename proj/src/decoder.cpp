// SPDX-License-Identifier: Apache-2.0

#include "clickseg/decoder.hpp"

#include <cmath>

namespace clickseg {

void DecoderConfig::validate() const {
  if (stages == 0) throw Error("decoder needs at least one stage");
  if (dim == 0 || ffn_dim == 0 || head_hidden == 0 || prototype_dim == 0)
    throw Error("decoder dimensions must be positive");
  if (heads == 0 || dim % heads != 0) throw Error("attention heads must divide the dimension");
  if (num_classes == 0) throw Error("decoder needs at least one class");
  if (num_classes > num_prototypes) throw Error("more classes than semantic prototypes");
  if (pe_bands < 0 || static_cast<std::size_t>(6 * pe_bands) > dim)
    throw Error("decoder positional code does not fit the query dimension");
}

template <class T>
QueryFeatures<T> encode_queries(const Tensor<T>& full, std::vector<Vec3> positions,
                                std::vector<std::vector<int>> rows) {
  if (positions.size() != rows.size()) throw Error("query lookup size mismatch");
  QueryFeatures<T> q;
  q.q = Tensor<T>(rows.size(), full.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].empty()) throw Error("query lookup has no neighbours");
    const T w = T(1) / static_cast<T>(rows[k].size());
    for (int r : rows[k]) simd::axpy(w, full.row(static_cast<std::size_t>(r)).data(), q.q.row(k).data(), full.cols());
  }
  q.positions = std::move(positions);
  q.rows = std::move(rows);
  return q;
}

template <class T>
Decoder::Decoder(ParamStore<T>& store, const DecoderConfig& cfg, const EncoderConfig& enc,
                 std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg_.validate();
  if (enc.out_dim != cfg_.dim) throw Error("encoder output dimension must equal query dimension");
  scene_dims_ = enc.dims;
  scene_dims_.push_back(enc.out_dim);
  if (cfg_.stages > scene_dims_.size())
    throw Error("decoder stage count exceeds the available scene scales");
  const std::size_t d = cfg_.dim;
  for (std::size_t s = 0; s < cfg_.stages; ++s) {
    const std::string p = "decoder.stage" + std::to_string(s);
    Stage st;
    st.in_proj = Linear::create(store, p + ".in_proj",
                                scene_dims_[stage_scale(s, scene_dims_.size())], d, rng);
    st.ln_kv = LayerNorm::create(store, p + ".ln_kv", d);
    st.ln1 = LayerNorm::create(store, p + ".ln1", d);
    st.ln2 = LayerNorm::create(store, p + ".ln2", d);
    st.ln3 = LayerNorm::create(store, p + ".ln3", d);
    st.c2s = MultiHeadAttention::create(store, p + ".c2s", d, cfg_.heads, rng, 0.5);
    st.c2c = MultiHeadAttention::create(store, p + ".c2c", d, cfg_.heads, rng, 0.5);
    st.ffn = Mlp::create(store, p + ".ffn", {d, cfg_.ffn_dim, d}, cfg_.activation, rng, 0.5);
    stages_.push_back(std::move(st));
  }
  mask_mlp_ = Mlp::create(store, "decoder.mask_mlp", {d, cfg_.head_hidden, d}, cfg_.activation,
                          rng, 1.0 / std::sqrt(static_cast<double>(d)));
  class_mlp_ = Mlp::create(store, "decoder.class_mlp", {d, cfg_.head_hidden, cfg_.prototype_dim},
                           cfg_.activation, rng);
  fuse_mlp_ = Mlp::create(store, "decoder.fuse_mlp",
                          {2 * d + cfg_.prototype_dim, cfg_.head_hidden, d}, cfg_.activation, rng);
  prototypes_ = store.add("decoder.prototypes", cfg_.num_prototypes, cfg_.prototype_dim);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(cfg_.prototype_dim)));
  for (auto& v : store.value(prototypes_).storage()) v = static_cast<T>(n(rng));
}

std::size_t Decoder::stage_scale(std::size_t stage, std::size_t scales) const {
  if (cfg_.stages > scales) throw Error("decoder stage count exceeds the available scene scales");
  if (stage + 1 == cfg_.stages) return scales - 1;
  return scales - 2 - stage;
}

template <class T>
Tensor<T> Decoder::transformer_block(const ParamStore<T>& store, std::size_t s, const Tensor<T>& q,
                                     const Tensor<T>& scene, std::span<const Vec3> scene_pos,
                                     std::span<const Vec3> click_pos, BlockCache<T>* c) const {
  const Stage& st = stages_.at(s);
  if (q.cols() != cfg_.dim) throw Error("transformer block: query dimension mismatch");
  if (scene.cols() != st.in_proj.in || scene.rows() != scene_pos.size())
    throw Error("transformer block: scene feature shape mismatch");
  if (click_pos.size() != q.rows()) throw Error("transformer block: click count mismatch");

  Tensor<T> s_in = st.in_proj.forward(store, scene);
  s_in += fourier_pe<T>(scene_pos, cfg_.pe_bands, cfg_.dim);
  LayerNormCache<T> ln_kv, ln1, ln2, ln3;
  Tensor<T> kv = st.ln_kv.forward(store, s_in, c ? &c->ln_kv : nullptr);

  Tensor<T> qpe = cfg_.query_pe ? fourier_pe<T>(click_pos, cfg_.pe_bands, cfg_.dim)
                                : Tensor<T>(q.rows(), cfg_.dim);
  Tensor<T> x1 = st.ln1.forward(store, q, c ? &c->ln1 : nullptr);
  x1 += qpe;
  Tensor<T> q1 = st.c2s.forward(store, x1, kv, c ? &c->c2s : nullptr);
  q1 += q;

  Tensor<T> x2 = st.ln2.forward(store, q1, c ? &c->ln2 : nullptr);
  x2 += qpe;
  Tensor<T> q2 = st.c2c.forward(store, x2, x2, c ? &c->c2c : nullptr);
  q2 += q1;

  Tensor<T> x3 = st.ln3.forward(store, q2, c ? &c->ln3 : nullptr);
  Tensor<T> q3 = st.ffn.forward(store, x3, c ? &c->ffn : nullptr);
  q3 += q2;
  if (c) {
    c->scene_in = scene;
    c->qpe = std::move(qpe);
  }
  return q3;
}

template <class T>
Tensor<T> Decoder::block_backward(ParamStore<T>& store, std::size_t s, const BlockCache<T>& c,
                                  const Tensor<T>& d_qt, Tensor<T>& d_scene) const {
  const Stage& st = stages_.at(s);
  // q3 = q2 + ffn(ln3(q2))
  Tensor<T> d_q2 = d_qt;
  d_q2 += st.ln3.backward(store, c.ln3, st.ffn.backward(store, c.ffn, d_qt));
  // q2 = q1 + c2c(x2, x2), x2 = ln2(q1) + qpe
  auto [d_x2q, d_x2kv] = st.c2c.backward(store, c.c2c, d_q2);
  d_x2q += d_x2kv;
  Tensor<T> d_q1 = d_q2;
  d_q1 += st.ln2.backward(store, c.ln2, d_x2q);
  // q1 = q + c2s(x1, kv), x1 = ln1(q) + qpe, kv = ln_kv(in_proj(F) + pe)
  auto [d_x1, d_kv] = st.c2s.backward(store, c.c2s, d_q1);
  Tensor<T> d_q = d_q1;
  d_q += st.ln1.backward(store, c.ln1, d_x1);
  Tensor<T> d_sin = st.ln_kv.backward(store, c.ln_kv, d_kv);
  d_scene = st.in_proj.backward(store, c.scene_in, d_sin);
  return d_q;
}

template <class T>
Tensor<T> Decoder::mask_head(const ParamStore<T>& store, const Tensor<T>& full,
                             const Tensor<T>& q_t, AdaptorCache<T>* c) const {
  Tensor<T> kernel = mask_mlp_.forward(store, q_t, c ? &c->mask_mlp : nullptr);
  Tensor<T> m = matmul(full, kernel, false, true);
  if (c) c->mask_kernel = std::move(kernel);
  return m;
}

template <class T>
Tensor<T> Decoder::class_head(const ParamStore<T>& store, const Tensor<T>& q_t,
                              AdaptorCache<T>* c) const {
  const Tensor<T>& protos = store.value(prototypes_);
  if (cfg_.num_classes > protos.rows()) throw Error("more classes than semantic prototypes");
  Tensor<T> kernel = class_mlp_.forward(store, q_t, c ? &c->class_mlp : nullptr);
  Tensor<T> z(cfg_.num_classes, q_t.rows());
  simd::gemm<T>(false, true, cfg_.num_classes, q_t.rows(), protos.cols(), protos.data(),
                kernel.data(), z.data(), false);
  if (c) c->class_kernel = std::move(kernel);
  return z;
}

template <class T>
Tensor<T> Decoder::query_adapt(const ParamStore<T>& store, const Tensor<T>& q_t,
                               const Tensor<T>& mask, const Tensor<T>& cls, const Tensor<T>& full,
                               AdaptorCache<T>* c) const {
  const std::size_t n = full.rows(), k = q_t.rows(), d = full.cols();
  if (mask.rows() != n || mask.cols() != k || cls.cols() != k)
    throw Error("query adaptor: shape mismatch");
  const Tensor<T>& protos = store.value(prototypes_);

  // Spatial embedding: mask pooling of F^L.
  Tensor<T> weights(n, k);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const T m = mask.data()[i];
    weights.data()[i] = cfg_.pooling == MaskPooling::hard ? (m >= T(0) ? T(1) : T(0)) : sigmoid(m);
  }
  Tensor<T> spatial = matmul(weights, full, true, false);  // K x D
  std::vector<T> norm(k, T(0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t q = 0; q < k; ++q) norm[q] += weights(j, q);
  for (std::size_t q = 0; q < k; ++q) {
    if (norm[q] > T(0)) {
      const T inv = T(1) / norm[q];
      for (std::size_t e = 0; e < d; ++e) spatial(q, e) *= inv;
    }
  }
  // Semantic embedding: prototype of the arg-max class.
  std::vector<int> sem(k);
  for (std::size_t q = 0; q < k; ++q) {
    std::size_t best = 0;
    for (std::size_t cl = 1; cl < cls.rows(); ++cl)
      if (cls(cl, q) > cls(best, q)) best = cl;
    sem[q] = static_cast<int>(best);
  }
  const std::size_t dh = protos.cols();
  Tensor<T> x(k, q_t.cols() + d + dh);
  for (std::size_t q = 0; q < k; ++q) {
    T* dst = x.row(q).data();
    dst = std::copy(q_t.row(q).begin(), q_t.row(q).end(), dst);
    dst = std::copy(spatial.row(q).begin(), spatial.row(q).end(), dst);
    auto pr = protos.row(static_cast<std::size_t>(sem[q]));
    std::copy(pr.begin(), pr.end(), dst);
  }
  Tensor<T> qa = fuse_mlp_.forward(store, x, c ? &c->fuse_mlp : nullptr);
  if (c) {
    c->pool_weights = std::move(weights);
    c->pool_norm = std::move(norm);
    c->spatial = std::move(spatial);
    c->semantic_index = std::move(sem);
  }
  return qa;
}

template <class T>
Tensor<T> Decoder::adaptor_backward(ParamStore<T>& store, const Tensor<T>& full,
                                    const Tensor<T>& q_t, const AdaptorCache<T>& c,
                                    const Tensor<T>* d_mask_in, const Tensor<T>* d_cls,
                                    const Tensor<T>* d_qa, Tensor<T>& d_full) const {
  const std::size_t n = full.rows(), k = q_t.rows(), d = full.cols();
  const std::size_t dh = cfg_.prototype_dim;
  Tensor<T> d_qt(k, q_t.cols());
  Tensor<T> d_mask = d_mask_in ? *d_mask_in : Tensor<T>(n, k);
  const Tensor<T>& protos = store.value(prototypes_);
  Tensor<T>& d_protos = store.grad(prototypes_);

  if (d_qa) {
    Tensor<T> dx = fuse_mlp_.backward(store, c.fuse_mlp, *d_qa);
    Tensor<T> d_sp(k, d);
    for (std::size_t q = 0; q < k; ++q) {
      const T* src = dx.row(q).data();
      simd::axpy(T(1), src, d_qt.row(q).data(), q_t.cols());
      std::copy(src + q_t.cols(), src + q_t.cols() + d, d_sp.row(q).data());
      simd::axpy(T(1), src + q_t.cols() + d,
                 d_protos.row(static_cast<std::size_t>(c.semantic_index[q])).data(), dh);
    }
    // E_p[q] = sum_j w_jq F_j / W_q
    for (std::size_t q = 0; q < k; ++q) {
      if (!(c.pool_norm[q] > T(0))) {
        for (std::size_t e = 0; e < d; ++e) d_sp(q, e) = T(0);
        continue;
      }
      const T inv = T(1) / c.pool_norm[q];
      for (std::size_t e = 0; e < d; ++e) d_sp(q, e) *= inv;
    }
    // d_full += W * d_sp (rows with zero weight contribute nothing)
    matmul_acc(c.pool_weights, d_sp, d_full);
    if (cfg_.pooling == MaskPooling::soft) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t q = 0; q < k; ++q) {
          const T w = c.pool_weights(j, q);
          T g = 0;
          for (std::size_t e = 0; e < d; ++e) g += (full(j, e) - c.spatial(q, e)) * d_sp(q, e);
          d_mask(j, q) += g * w * (T(1) - w);
        }
      }
    }
  }
  if (d_cls) {
    // Z = P_c K_c^T
    Tensor<T> d_kernel(k, dh);
    simd::gemm<T>(true, false, k, dh, cfg_.num_classes, d_cls->data(), protos.data(),
                  d_kernel.data(), false);
    simd::gemm<T>(false, false, cfg_.num_classes, dh, k, d_cls->data(), c.class_kernel.data(),
                  d_protos.data(), true);
    d_qt += class_mlp_.backward(store, c.class_mlp, d_kernel);
  }
  // M = F K_m^T
  Tensor<T> d_kernel = matmul(d_mask, full, true, false);
  matmul_acc(d_mask, c.mask_kernel, d_full);
  d_qt += mask_mlp_.backward(store, c.mask_mlp, d_kernel);
  return d_qt;
}

template <class T>
std::vector<StageOutput<T>> Decoder::decode(const ParamStore<T>& store,
                                            const MultiScaleFeatures<T>& feats,
                                            const QueryFeatures<T>& queries,
                                            DecoderCache<T>* cache) const {
  if (queries.q.rows() == 0) throw Error("at least one click required");
  const std::size_t scales = feats.scales();
  if (cfg_.stages > scales) throw Error("decoder stage count exceeds the available scene scales");
  if (scales != scene_dims_.size()) throw Error("scene scale count does not match the decoder");
  if (cache) {
    cache->blocks.assign(cfg_.stages, {});
    cache->adaptors.assign(cfg_.stages, {});
    cache->stage_inputs.assign(cfg_.stages, {});
  }
  const Tensor<T>& full = feats.full();
  std::vector<StageOutput<T>> out;
  Tensor<T> q = queries.q;
  for (std::size_t s = 0; s < cfg_.stages; ++s) {
    const std::size_t sc = stage_scale(s, scales);
    StageOutput<T> so;
    so.q_t = transformer_block(store, s, q, feats.features[sc], *feats.positions[sc],
                               queries.positions, cache ? &cache->blocks[s] : nullptr);
    AdaptorCache<T>* ac = cache ? &cache->adaptors[s] : nullptr;
    so.mask_logits = mask_head(store, full, so.q_t, ac);
    so.class_logits = class_head(store, so.q_t, ac);
    so.q_a = query_adapt(store, so.q_t, so.mask_logits, so.class_logits, full, ac);
    if (cache) cache->stage_inputs[s] = std::move(q);
    q = so.q_a;
    out.push_back(std::move(so));
  }
  return out;
}

template <class T>
std::pair<std::vector<Tensor<T>>, Tensor<T>> Decoder::backward(
    ParamStore<T>& store, const MultiScaleFeatures<T>& feats, const QueryFeatures<T>& queries,
    const std::vector<StageOutput<T>>& outputs, const DecoderCache<T>& cache,
    const std::vector<StageGrads<T>>& grads) const {
  const std::size_t scales = feats.scales();
  const Tensor<T>& full = feats.full();
  std::vector<Tensor<T>> d_scales(scales);
  d_scales[scales - 1] = Tensor<T>(full.rows(), full.cols());
  Tensor<T> d_next;  // gradient w.r.t. this stage's Q_a, from the next stage
  for (std::size_t s = cfg_.stages; s-- > 0;) {
    const auto& g = grads.at(s);
    const Tensor<T>* dm = g.mask_logits.empty() ? nullptr : &g.mask_logits;
    const Tensor<T>* dz = g.class_logits.empty() ? nullptr : &g.class_logits;
    const Tensor<T>* dqa = d_next.empty() ? nullptr : &d_next;
    Tensor<T> d_qt = adaptor_backward(store, full, outputs[s].q_t, cache.adaptors[s], dm, dz, dqa,
                                      d_scales[scales - 1]);
    Tensor<T> d_scene;
    d_next = block_backward(store, s, cache.blocks[s], d_qt, d_scene);
    const std::size_t sc = stage_scale(s, scales);
    if (d_scales[sc].empty()) d_scales[sc] = Tensor<T>(d_scene.rows(), d_scene.cols());
    d_scales[sc] += d_scene;
  }
  (void)queries;
  return {std::move(d_scales), std::move(d_next)};
}

#define CLICKSEG_INSTANTIATE(T)                                                                  \
  template QueryFeatures<T> encode_queries<T>(const Tensor<T>&, std::vector<Vec3>,               \
                                              std::vector<std::vector<int>>);                    \
  template Decoder::Decoder(ParamStore<T>&, const DecoderConfig&, const EncoderConfig&,          \
                            std::mt19937_64&);                                                   \
  template Tensor<T> Decoder::transformer_block<T>(const ParamStore<T>&, std::size_t,            \
                                                   const Tensor<T>&, const Tensor<T>&,           \
                                                   std::span<const Vec3>, std::span<const Vec3>, \
                                                   BlockCache<T>*) const;                        \
  template Tensor<T> Decoder::mask_head<T>(const ParamStore<T>&, const Tensor<T>&,               \
                                           const Tensor<T>&, AdaptorCache<T>*) const;            \
  template Tensor<T> Decoder::class_head<T>(const ParamStore<T>&, const Tensor<T>&,              \
                                            AdaptorCache<T>*) const;                             \
  template Tensor<T> Decoder::query_adapt<T>(const ParamStore<T>&, const Tensor<T>&,             \
                                             const Tensor<T>&, const Tensor<T>&,                 \
                                             const Tensor<T>&, AdaptorCache<T>*) const;          \
  template std::vector<StageOutput<T>> Decoder::decode<T>(                                       \
      const ParamStore<T>&, const MultiScaleFeatures<T>&, const QueryFeatures<T>&,               \
      DecoderCache<T>*) const;                                                                   \
  template std::pair<std::vector<Tensor<T>>, Tensor<T>> Decoder::backward<T>(                    \
      ParamStore<T>&, const MultiScaleFeatures<T>&, const QueryFeatures<T>&,                     \
      const std::vector<StageOutput<T>>&, const DecoderCache<T>&,                                \
      const std::vector<StageGrads<T>>&) const;

CLICKSEG_INSTANTIATE(float)
CLICKSEG_INSTANTIATE(double)
#undef CLICKSEG_INSTANTIATE

}  // namespace clickseg
