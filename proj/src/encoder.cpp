// SPDX-License-Identifier: Apache-2.0

#include "clickseg/encoder.hpp"

#include <cmath>

namespace clickseg {

void EncoderConfig::validate() const {
  if (dims.empty()) throw Error("encoder needs at least one level");
  if (dims.size() != voxel_sizes.size()) throw Error("encoder dims and voxel sizes differ in length");
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] == 0) throw Error("encoder level dimension must be positive");
    if (!(voxel_sizes[i] > 0) || !std::isfinite(voxel_sizes[i]))
      throw Error("encoder voxel sizes must be finite and positive");
  }
  if (out_dim == 0) throw Error("encoder output dimension must be positive");
  if (pe_bands < 0) throw Error("encoder pe_bands must be non-negative");
}

EncoderGeometry build_encoder_geometry(std::span<const Vec3> positions,
                                       const Tensor<double>& attributes,
                                       const EncoderConfig& cfg) {
  cfg.validate();
  if (positions.empty()) throw Error("degenerate hierarchy: empty scene");
  const std::size_t n = positions.size();
  EncoderGeometry geo;
  geo.levels.resize(cfg.levels());

  // Level 0: full resolution. Inputs are [1, xyz, rgb?, offset to the centroid
  // of the point's finest voxel / voxel size].
  {
    auto& l0 = geo.levels[0];
    l0.positions.assign(positions.begin(), positions.end());
    const auto g = voxel_group(positions, cfg.voxel_sizes[0]);
    l0.inputs = Tensor<double>(n, cfg.input_dim());
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t c = 0;
      l0.inputs(i, c++) = 1.0;
      for (int a = 0; a < 3; ++a) l0.inputs(i, c++) = positions[i][a];
      if (cfg.use_colors)
        for (int a = 0; a < 3; ++a)
          l0.inputs(i, c++) = attributes.rows() == n ? attributes(i, a) : 0.0;
      const Vec3& ctr = g.centroids[g.parent[i]];
      for (int a = 0; a < 3; ++a) l0.inputs(i, c++) = (positions[i][a] - ctr[a]) / cfg.voxel_sizes[0];
    }
  }
  for (std::size_t l = 1; l < cfg.levels(); ++l) {
    const auto& prev = geo.levels[l - 1].positions;
    auto g = voxel_group(prev, cfg.voxel_sizes[l]);
    if (g.centroids.empty()) throw Error("degenerate hierarchy");
    auto& lv = geo.levels[l];
    lv.inputs = Tensor<double>(prev.size(), 3);
    for (std::size_t i = 0; i < prev.size(); ++i)
      for (int a = 0; a < 3; ++a)
        lv.inputs(i, a) = (prev[i][a] - g.centroids[g.parent[i]][a]) / cfg.voxel_sizes[l];
    lv.positions = std::move(g.centroids);
    lv.children = std::move(g.children);
    lv.parent = std::move(g.parent);
  }
  geo.ancestor.resize(cfg.levels());
  geo.ancestor[0].resize(n);
  for (std::size_t i = 0; i < n; ++i) geo.ancestor[0][i] = static_cast<int>(i);
  for (std::size_t l = 1; l < cfg.levels(); ++l) {
    geo.ancestor[l].resize(n);
    for (std::size_t i = 0; i < n; ++i)
      geo.ancestor[l][i] = geo.levels[l].parent[geo.ancestor[l - 1][i]];
  }
  geo.pe = fourier_pe<double>(positions, cfg.pe_bands, static_cast<std::size_t>(6 * cfg.pe_bands));
  return geo;
}

template <class T>
Encoder::Encoder(ParamStore<T>& store, const EncoderConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg_.validate();
  std::size_t concat = 0;
  for (std::size_t l = 0; l < cfg_.levels(); ++l) {
    const std::size_t in = l == 0 ? cfg_.input_dim() : 3 + cfg_.dims[l - 1];
    level_layers_.push_back(Linear::create(store, "encoder.level" + std::to_string(l), in,
                                           cfg_.dims[l], rng, std::sqrt(2.0)));
    concat += cfg_.dims[l];
  }
  concat += static_cast<std::size_t>(6 * cfg_.pe_bands);
  out_ = Mlp::create(store, "encoder.out", {concat, cfg_.out_dim, cfg_.out_dim},
                     cfg_.activation, rng);
}

template <class T>
MultiScaleFeatures<T> Encoder::forward(const ParamStore<T>& store, const EncoderGeometry& geo,
                                       EncoderCache<T>* cache) const {
  const std::size_t levels = cfg_.levels();
  if (geo.levels.size() != levels) throw Error("encoder geometry was built for another config");
  MultiScaleFeatures<T> out;
  if (cache) {
    cache->inputs.assign(levels, {});
    cache->pre.assign(levels, {});
  }
  for (std::size_t l = 0; l < levels; ++l) {
    const auto& lv = geo.levels[l];
    Tensor<T> x;
    if (l == 0) {
      x = lv.inputs.template cast<T>();
    } else {
      const Tensor<T>& prev = out.features[l - 1];
      x = Tensor<T>(prev.rows(), 3 + prev.cols());
      for (std::size_t i = 0; i < prev.rows(); ++i) {
        for (int a = 0; a < 3; ++a) x(i, a) = static_cast<T>(lv.inputs(i, a));
        std::copy(prev.row(i).begin(), prev.row(i).end(), x.row(i).begin() + 3);
      }
    }
    Tensor<T> z = level_layers_[l].forward(store, x);
    Tensor<T> f;
    if (l == 0) {
      f = Tensor<T>(z.rows(), z.cols());
      for (std::size_t j = 0; j < z.size(); ++j) f.data()[j] = activate(cfg_.activation, z.data()[j]);
    } else {
      f = Tensor<T>(lv.positions.size(), z.cols());
      for (std::size_t c = 0; c < lv.children.size(); ++c) {
        T* dst = f.row(c).data();
        for (int ch : lv.children[c])
          for (std::size_t d = 0; d < z.cols(); ++d) dst[d] += activate(cfg_.activation, z(ch, d));
        const T inv = T(1) / static_cast<T>(lv.children[c].size());
        for (std::size_t d = 0; d < z.cols(); ++d) dst[d] *= inv;
      }
    }
    if (cache) {
      cache->inputs[l] = std::move(x);
      cache->pre[l] = std::move(z);
    }
    out.features.push_back(std::move(f));
    out.positions.push_back(&lv.positions);
  }

  const std::size_t n = geo.size();
  std::size_t concat = geo.pe.cols();
  for (const auto& f : out.features) concat += f.cols();
  Tensor<T> x(n, concat);
  for (std::size_t i = 0; i < n; ++i) {
    T* dst = x.row(i).data();
    for (std::size_t l = 0; l < levels; ++l) {
      auto src = out.features[l].row(static_cast<std::size_t>(geo.ancestor[l][i]));
      dst = std::copy(src.begin(), src.end(), dst);
    }
    for (std::size_t c = 0; c < geo.pe.cols(); ++c) *dst++ = static_cast<T>(geo.pe(i, c));
  }
  out.features.push_back(out_.forward(store, x, cache ? &cache->out : nullptr));
  out.positions.push_back(&geo.levels[0].positions);
  return out;
}

template <class T>
void Encoder::backward(ParamStore<T>& store, const EncoderGeometry& geo,
                       const EncoderCache<T>& cache, std::vector<Tensor<T>> d_feat) const {
  const std::size_t levels = cfg_.levels();
  if (d_feat.size() != levels + 1) throw Error("encoder backward: wrong number of scales");
  for (std::size_t l = 0; l < levels; ++l)
    if (d_feat[l].empty()) d_feat[l] = Tensor<T>(geo.levels[l].positions.size(), cfg_.dims[l]);

  if (!d_feat[levels].empty()) {
    Tensor<T> dx = out_.backward(store, cache.out, d_feat[levels]);
    for (std::size_t i = 0; i < geo.size(); ++i) {
      const T* src = dx.row(i).data();
      for (std::size_t l = 0; l < levels; ++l) {
        T* dst = d_feat[l].row(static_cast<std::size_t>(geo.ancestor[l][i])).data();
        simd::axpy(T(1), src, dst, cfg_.dims[l]);
        src += cfg_.dims[l];
      }
    }
  }
  for (std::size_t l = levels; l-- > 0;) {
    const auto& lv = geo.levels[l];
    const Tensor<T>& z = cache.pre[l];
    Tensor<T> dz(z.rows(), z.cols());
    if (l == 0) {
      for (std::size_t j = 0; j < z.size(); ++j)
        dz.data()[j] = d_feat[0].data()[j] * activate_grad(cfg_.activation, z.data()[j]);
    } else {
      for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto p = static_cast<std::size_t>(lv.parent[i]);
        const T inv = T(1) / static_cast<T>(lv.children[p].size());
        for (std::size_t d = 0; d < z.cols(); ++d)
          dz(i, d) = d_feat[l](p, d) * inv * activate_grad(cfg_.activation, z(i, d));
      }
    }
    Tensor<T> dx = level_layers_[l].backward(store, cache.inputs[l], dz);
    if (l > 0) {
      Tensor<T>& dprev = d_feat[l - 1];
      for (std::size_t i = 0; i < dx.rows(); ++i)
        simd::axpy(T(1), dx.row(i).data() + 3, dprev.row(i).data(), dprev.cols());
    }
  }
}

template Encoder::Encoder(ParamStore<float>&, const EncoderConfig&, std::mt19937_64&);
template Encoder::Encoder(ParamStore<double>&, const EncoderConfig&, std::mt19937_64&);
template MultiScaleFeatures<float> Encoder::forward<float>(const ParamStore<float>&,
                                                           const EncoderGeometry&,
                                                           EncoderCache<float>*) const;
template MultiScaleFeatures<double> Encoder::forward<double>(const ParamStore<double>&,
                                                             const EncoderGeometry&,
                                                             EncoderCache<double>*) const;
template void Encoder::backward<float>(ParamStore<float>&, const EncoderGeometry&,
                                       const EncoderCache<float>&,
                                       std::vector<Tensor<float>>) const;
template void Encoder::backward<double>(ParamStore<double>&, const EncoderGeometry&,
                                        const EncoderCache<double>&,
                                        std::vector<Tensor<double>>) const;

}  // namespace clickseg
