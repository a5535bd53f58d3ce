// SPDX-License-Identifier: Apache-2.0

#include "clickseg/model.hpp"

#include <cmath>
#include <random>

namespace clickseg {

using nlohmann::json;

namespace {

std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  throw Error("unknown activation: " + s);
}

template <class V>
void read_opt(const json& doc, const char* key, V& out) {
  if (doc.contains(key)) out = doc.at(key).get<V>();
}

}  // namespace

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  loss.validate();
  if (encoder.out_dim != decoder.dim) throw Error("encoder output dimension must equal query dimension");
  if (query_k == 0) throw Error("query_k must be positive");
  if (max_points == 0) throw Error("max_points must be positive");
}

json model_config_to_json(const ModelConfig& c) {
  json enc = {{"dims", c.encoder.dims},
              {"voxel_sizes", c.encoder.voxel_sizes},
              {"out_dim", c.encoder.out_dim},
              {"pe_bands", c.encoder.pe_bands},
              {"use_colors", c.encoder.use_colors},
              {"activation", activation_name(c.encoder.activation)}};
  json dec = {{"stages", c.decoder.stages},
              {"dim", c.decoder.dim},
              {"heads", c.decoder.heads},
              {"ffn_dim", c.decoder.ffn_dim},
              {"head_hidden", c.decoder.head_hidden},
              {"num_classes", c.decoder.num_classes},
              {"num_prototypes", c.decoder.num_prototypes},
              {"prototype_dim", c.decoder.prototype_dim},
              {"pe_bands", c.decoder.pe_bands},
              {"query_pe", c.decoder.query_pe},
              {"pooling", c.decoder.pooling == MaskPooling::hard ? "hard" : "soft"},
              {"activation", activation_name(c.decoder.activation)}};
  json loss = {{"bce", c.loss.bce},
               {"dice", c.loss.dice},
               {"ce", c.loss.ce},
               {"eps", c.loss.eps},
               {"bce_per_query", c.loss.bce_per_query}};
  return {{"version", c.version}, {"encoder", enc},          {"decoder", dec},
          {"loss", loss},         {"query_k", c.query_k},    {"max_points", c.max_points},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& doc) {
  ModelConfig c;
  try {
    read_opt(doc, "version", c.version);
    read_opt(doc, "query_k", c.query_k);
    read_opt(doc, "max_points", c.max_points);
    read_opt(doc, "seed", c.seed);
    if (doc.contains("encoder")) {
      const json& e = doc.at("encoder");
      read_opt(e, "dims", c.encoder.dims);
      read_opt(e, "voxel_sizes", c.encoder.voxel_sizes);
      read_opt(e, "out_dim", c.encoder.out_dim);
      read_opt(e, "pe_bands", c.encoder.pe_bands);
      read_opt(e, "use_colors", c.encoder.use_colors);
      if (e.contains("activation")) c.encoder.activation = parse_activation(e.at("activation"));
    }
    if (doc.contains("decoder")) {
      const json& d = doc.at("decoder");
      read_opt(d, "stages", c.decoder.stages);
      read_opt(d, "dim", c.decoder.dim);
      read_opt(d, "heads", c.decoder.heads);
      read_opt(d, "ffn_dim", c.decoder.ffn_dim);
      read_opt(d, "head_hidden", c.decoder.head_hidden);
      read_opt(d, "num_classes", c.decoder.num_classes);
      read_opt(d, "num_prototypes", c.decoder.num_prototypes);
      read_opt(d, "prototype_dim", c.decoder.prototype_dim);
      read_opt(d, "pe_bands", c.decoder.pe_bands);
      read_opt(d, "query_pe", c.decoder.query_pe);
      if (d.contains("pooling")) {
        const std::string p = d.at("pooling");
        if (p != "hard" && p != "soft") throw Error("unknown pooling: " + p);
        c.decoder.pooling = p == "hard" ? MaskPooling::hard : MaskPooling::soft;
      }
      if (d.contains("activation")) c.decoder.activation = parse_activation(d.at("activation"));
    }
    if (doc.contains("loss")) {
      const json& l = doc.at("loss");
      read_opt(l, "bce", c.loss.bce);
      read_opt(l, "dice", c.loss.dice);
      read_opt(l, "ce", c.loss.ce);
      read_opt(l, "eps", c.loss.eps);
      read_opt(l, "bce_per_query", c.loss.bce_per_query);
    }
  } catch (const json::exception& e) {
    throw Error(std::string("invalid model config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig small_model_config() {
  ModelConfig c;
  c.encoder.dims = {8, 12, 16, 24};
  c.encoder.out_dim = 32;
  c.encoder.pe_bands = 3;
  c.decoder.dim = 32;
  c.decoder.heads = 2;
  c.decoder.ffn_dim = 48;
  c.decoder.head_hidden = 32;
  c.decoder.prototype_dim = 16;
  c.decoder.pe_bands = 3;
  return c;
}

PreparedScene prepare_scene(const PointCloud& cloud, const ModelConfig& cfg) {
  cloud.validate();
  PreparedScene ps;
  ps.input_size = cloud.size();
  ps.transform = fit_normalization(cloud.positions);
  std::vector<Vec3> norm(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) norm[i] = ps.transform.apply(cloud.positions[i]);
  const bool want_attr = cfg.encoder.use_colors && cloud.has_attributes();

  if (cloud.size() <= cfg.max_points) {
    ps.positions = std::move(norm);
    if (want_attr) ps.attributes = cloud.attributes;
  } else {
    // Grow the voxel until the reduced cloud fits; the estimate assumes a
    // surface-like scene spanning the unit cube.
    double v = 0.5 / std::sqrt(static_cast<double>(cfg.max_points));
    VoxelGrouping g = voxel_group(norm, v);
    while (g.centroids.size() > cfg.max_points) {
      v *= 1.2;
      g = voxel_group(norm, v);
    }
    ps.positions = std::move(g.centroids);
    ps.point_map = std::move(g.parent);
    if (want_attr) {
      const std::size_t a = cloud.attributes.cols();
      ps.attributes = Tensor<double>(ps.positions.size(), a);
      for (std::size_t c = 0; c < g.children.size(); ++c) {
        for (int ch : g.children[c])
          for (std::size_t k = 0; k < a; ++k) ps.attributes(c, k) += cloud.attributes(ch, k);
        for (std::size_t k = 0; k < a; ++k)
          ps.attributes(c, k) /= static_cast<double>(g.children[c].size());
      }
    }
  }
  ps.geometry = build_encoder_geometry(ps.positions, ps.attributes, cfg.encoder);
  ps.index = std::make_shared<SpatialIndex>(ps.positions);
  return ps;
}

template <class T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  encoder_ = Encoder(params_, cfg_.encoder, rng);
  decoder_ = Decoder(params_, cfg_.decoder, cfg_.encoder, rng);
}

template <class T>
QueryFeatures<T> Model<T>::lookup(const PreparedScene& scene, const MultiScaleFeatures<T>& feats,
                                  const ClickSet& clicks) const {
  if (clicks.empty()) throw Error("at least one click required");
  if (cfg_.query_k > scene.size()) throw Error("query_k exceeds the number of scene points");
  std::vector<Vec3> pos;
  std::vector<std::vector<int>> rows;
  pos.reserve(clicks.size());
  rows.reserve(clicks.size());
  for (const Click& c : clicks.clicks) {
    const Vec3 p = scene.transform.apply(c.position);
    pos.push_back(p);
    rows.push_back(scene.index->knn(p, cfg_.query_k));
  }
  return encode_queries(feats.full(), std::move(pos), std::move(rows));
}

template <class T>
std::vector<StageOutput<T>> Model<T>::forward(const PreparedScene& scene, const ClickSet& clicks,
                                              ForwardState<T>* state) const {
  if (clicks.empty()) throw Error("at least one click required");
  if (state) {
    state->features = encoder_.forward(params_, scene.geometry, &state->encoder);
    state->queries = lookup(scene, state->features, clicks);
    state->stages = decoder_.decode(params_, state->features, state->queries, &state->decoder);
    return state->stages;
  }
  const auto feats = encoder_.forward<T>(params_, scene.geometry, nullptr);
  const auto queries = lookup(scene, feats, clicks);
  return decoder_.decode<T>(params_, feats, queries, nullptr);
}

template <class T>
void Model<T>::backward(const PreparedScene& scene, const ForwardState<T>& st,
                        const std::vector<StageGrads<T>>& grads) {
  auto [d_scales, d_q0] =
      decoder_.backward(params_, st.features, st.queries, st.stages, st.decoder, grads);
  Tensor<T>& d_full = d_scales.back();
  for (std::size_t k = 0; k < st.queries.rows.size(); ++k) {
    const auto& rows = st.queries.rows[k];
    const T w = T(1) / static_cast<T>(rows.size());
    for (int r : rows)
      simd::axpy(w, d_q0.row(k).data(), d_full.row(static_cast<std::size_t>(r)).data(), d_full.cols());
  }
  encoder_.backward(params_, scene.geometry, st.encoder, std::move(d_scales));
}

template <class T>
LossBreakdown Model<T>::loss_and_grad(const PreparedScene& scene, const ClickSet& clicks,
                                      const SupervisionTargets& targets) {
  ForwardState<T> st;
  forward(scene, clicks, &st);
  std::vector<StageGrads<T>> grads;
  LossBreakdown out = total_loss(st.stages, targets, cfg_.loss, &grads);
  backward(scene, st, grads);
  return out;
}

template <class T>
double Model<T>::loss(const PreparedScene& scene, const ClickSet& clicks,
                      const SupervisionTargets& targets) const {
  return total_loss(forward(scene, clicks), targets, cfg_.loss).total;
}

template <class T>
void Model<T>::save(const std::filesystem::path& path) const {
  save_checkpoint(path, model_config_to_json(cfg_).dump(), params_);
}

template <class T>
Model<T> Model<T>::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  json doc;
  try {
    doc = json::parse(ckpt.config_json);
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  Model<T> m(model_config_from_json(doc));
  load_parameters(ckpt, m.params_);
  return m;
}

template class Model<float>;
template class Model<double>;

}  // namespace clickseg
