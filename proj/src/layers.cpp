// SPDX-License-Identifier: Apache-2.0

#include "clickseg/layers.hpp"

#include <cmath>

namespace clickseg {

template <class T>
void add_row_bias(Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.size() != x.cols()) throw Error("bias size mismatch");
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T* row = x.row(r).data();
    for (std::size_t c = 0; c < x.cols(); ++c) row[c] += bias.data()[c];
  }
}

template <class T>
void accumulate_col_sums(const Tensor<T>& dy, Tensor<T>& grad) {
  for (std::size_t r = 0; r < dy.rows(); ++r)
    simd::axpy(T(1), dy.row(r).data(), grad.data(), dy.cols());
}

template <class T>
Linear Linear::create(ParamStore<T>& store, const std::string& name, std::size_t in,
                      std::size_t out, std::mt19937_64& rng, double gain) {
  Linear l;
  l.in = in;
  l.out = out;
  l.w = store.add(name + ".weight", in, out);
  l.b = store.add(name + ".bias", 1, out);
  std::normal_distribution<double> n(0.0, gain / std::sqrt(static_cast<double>(in)));
  for (auto& v : store.value(l.w).storage()) v = static_cast<T>(n(rng));
  return l;
}

template <class T>
Tensor<T> Linear::forward(const ParamStore<T>& store, const Tensor<T>& x) const {
  if (x.cols() != in) throw Error("linear: input dimension mismatch");
  Tensor<T> y = matmul(x, store.value(w));
  add_row_bias(y, store.value(b));
  return y;
}

template <class T>
Tensor<T> Linear::backward(ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>& dy) const {
  matmul_acc(x, dy, store.grad(w), true, false);
  accumulate_col_sums(dy, store.grad(b));
  return matmul(dy, store.value(w), false, true);
}

template <class T>
Mlp Mlp::create(ParamStore<T>& store, const std::string& name,
                const std::vector<std::size_t>& dims, Activation act, std::mt19937_64& rng,
                double last_gain) {
  if (dims.size() < 2) throw Error("mlp needs at least input and output dims");
  Mlp m;
  m.act = act;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    // Hidden layers get the usual gain for the nonlinearity that follows.
    const double gain = last ? last_gain : std::sqrt(2.0);
    m.layers.push_back(Linear::create(store, name + "." + std::to_string(i), dims[i], dims[i + 1],
                                      rng, gain));
  }
  return m;
}

template <class T>
Tensor<T> Mlp::forward(const ParamStore<T>& store, const Tensor<T>& x, MlpCache<T>* cache) const {
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Tensor<T> z = layers[i].forward(store, h);
    if (cache) cache->inputs.push_back(std::move(h));
    if (i + 1 == layers.size()) return z;
    h = Tensor<T>(z.rows(), z.cols());
    for (std::size_t j = 0; j < z.size(); ++j) h.data()[j] = activate(act, z.data()[j]);
    if (cache) cache->pre.push_back(std::move(z));
  }
  return h;
}

template <class T>
Tensor<T> Mlp::backward(ParamStore<T>& store, const MlpCache<T>& cache, const Tensor<T>& dy) const {
  Tensor<T> d = dy;
  for (std::size_t i = layers.size(); i-- > 0;) {
    d = layers[i].backward(store, cache.inputs[i], d);
    if (i > 0) {
      const Tensor<T>& z = cache.pre[i - 1];
      for (std::size_t j = 0; j < d.size(); ++j) d.data()[j] *= activate_grad(act, z.data()[j]);
    }
  }
  return d;
}

template <class T>
LayerNorm LayerNorm::create(ParamStore<T>& store, const std::string& name, std::size_t dim) {
  LayerNorm ln;
  ln.gamma = store.add(name + ".gamma", 1, dim);
  ln.beta = store.add(name + ".beta", 1, dim);
  store.value(ln.gamma).fill(T(1));
  return ln;
}

template <class T>
MultiHeadAttention MultiHeadAttention::create(ParamStore<T>& store, const std::string& name,
                                              std::size_t dim, std::size_t heads,
                                              std::mt19937_64& rng, double out_gain) {
  if (heads == 0 || dim % heads != 0) throw Error("attention heads must divide the dimension");
  MultiHeadAttention a;
  a.dim = dim;
  a.heads = heads;
  a.wq = Linear::create(store, name + ".q", dim, dim, rng);
  a.wk = Linear::create(store, name + ".k", dim, dim, rng);
  a.wv = Linear::create(store, name + ".v", dim, dim, rng);
  a.wo = Linear::create(store, name + ".out", dim, dim, rng, out_gain);
  return a;
}

template <class T>
Tensor<T> MultiHeadAttention::forward(const ParamStore<T>& store, const Tensor<T>& xq,
                                      const Tensor<T>& xkv, MhaCache<T>* cache) const {
  if (xq.cols() != dim || xkv.cols() != dim) throw Error("attention: dimension mismatch");
  Tensor<T> q = wq.forward(store, xq);
  Tensor<T> k = wk.forward(store, xkv);
  Tensor<T> v = wv.forward(store, xkv);
  const std::size_t hd = dim / heads;
  Tensor<T> o(xq.rows(), dim);
  std::vector<Tensor<T>> weights(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    if (heads == 1) {
      o = attention(q, k, v, &weights[h]);
    } else {
      Tensor<T> oh = attention(slice_cols(q, h * hd, hd), slice_cols(k, h * hd, hd),
                               slice_cols(v, h * hd, hd), &weights[h]);
      add_into_cols(o, oh, h * hd);
    }
  }
  Tensor<T> y = wo.forward(store, o);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
    cache->weights = std::move(weights);
  }
  return y;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> MultiHeadAttention::backward(ParamStore<T>& store,
                                                             const MhaCache<T>& c,
                                                             const Tensor<T>& dy) const {
  Tensor<T> d_o = wo.backward(store, c.o, dy);
  Tensor<T> dq, dk, dv;
  if (heads == 1) {
    auto g = attention_backward(c.q, c.k, c.v, c.weights[0], d_o);
    dq = std::move(g.queries);
    dk = std::move(g.keys);
    dv = std::move(g.values);
  } else {
    const std::size_t hd = dim / heads;
    dq = Tensor<T>(c.q.rows(), dim);
    dk = Tensor<T>(c.k.rows(), dim);
    dv = Tensor<T>(c.v.rows(), dim);
    for (std::size_t h = 0; h < heads; ++h) {
      auto g = attention_backward(slice_cols(c.q, h * hd, hd), slice_cols(c.k, h * hd, hd),
                                  slice_cols(c.v, h * hd, hd), c.weights[h],
                                  slice_cols(d_o, h * hd, hd));
      add_into_cols(dq, g.queries, h * hd);
      add_into_cols(dk, g.keys, h * hd);
      add_into_cols(dv, g.values, h * hd);
    }
  }
  Tensor<T> dxq = wq.backward(store, c.xq, dq);
  Tensor<T> dxkv = wk.backward(store, c.xkv, dk);
  dxkv += wv.backward(store, c.xkv, dv);
  return {std::move(dxq), std::move(dxkv)};
}

#define CLICKSEG_INSTANTIATE(T)                                                                \
  template void add_row_bias<T>(Tensor<T>&, const Tensor<T>&);                                 \
  template void accumulate_col_sums<T>(const Tensor<T>&, Tensor<T>&);                          \
  template Linear Linear::create<T>(ParamStore<T>&, const std::string&, std::size_t,           \
                                    std::size_t, std::mt19937_64&, double);                    \
  template Tensor<T> Linear::forward<T>(const ParamStore<T>&, const Tensor<T>&) const;         \
  template Tensor<T> Linear::backward<T>(ParamStore<T>&, const Tensor<T>&, const Tensor<T>&)   \
      const;                                                                                   \
  template Mlp Mlp::create<T>(ParamStore<T>&, const std::string&,                              \
                              const std::vector<std::size_t>&, Activation, std::mt19937_64&,   \
                              double);                                                         \
  template Tensor<T> Mlp::forward<T>(const ParamStore<T>&, const Tensor<T>&, MlpCache<T>*)     \
      const;                                                                                   \
  template Tensor<T> Mlp::backward<T>(ParamStore<T>&, const MlpCache<T>&, const Tensor<T>&)    \
      const;                                                                                   \
  template LayerNorm LayerNorm::create<T>(ParamStore<T>&, const std::string&, std::size_t);    \
  template MultiHeadAttention MultiHeadAttention::create<T>(                                   \
      ParamStore<T>&, const std::string&, std::size_t, std::size_t, std::mt19937_64&, double); \
  template Tensor<T> MultiHeadAttention::forward<T>(const ParamStore<T>&, const Tensor<T>&,    \
                                                    const Tensor<T>&, MhaCache<T>*) const;     \
  template std::pair<Tensor<T>, Tensor<T>> MultiHeadAttention::backward<T>(                    \
      ParamStore<T>&, const MhaCache<T>&, const Tensor<T>&) const;

CLICKSEG_INSTANTIATE(float)
CLICKSEG_INSTANTIATE(double)
#undef CLICKSEG_INSTANTIATE

}  // namespace clickseg
