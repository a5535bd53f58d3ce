// SPDX-License-Identifier: Apache-2.0
//
// Parameterized building blocks. Each module only stores parameter indices
// into a ParamStore; forward passes fill a cache that the matching backward
// pass consumes. Backward passes accumulate into the store's gradients.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "clickseg/numerics.hpp"
#include "clickseg/params.hpp"

namespace clickseg {

/// y = x W + b with W stored as in x out.
struct Linear {
  std::size_t w = 0, b = 0;
  std::size_t in = 0, out = 0;

  template <class T>
  static Linear create(ParamStore<T>& store, const std::string& name, std::size_t in,
                       std::size_t out, std::mt19937_64& rng, double gain = 1.0);

  template <class T>
  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x) const;
  template <class T>
  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>& dy) const;
};

template <class T>
struct MlpCache {
  std::vector<Tensor<T>> inputs;  // input to each linear layer
  std::vector<Tensor<T>> pre;     // pre-activation of each hidden layer
};

/// Linear layers with an activation between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;
  Activation act = Activation::gelu;

  template <class T>
  static Mlp create(ParamStore<T>& store, const std::string& name,
                    const std::vector<std::size_t>& dims, Activation act, std::mt19937_64& rng,
                    double last_gain = 1.0);

  std::size_t in_dim() const { return layers.front().in; }
  std::size_t out_dim() const { return layers.back().out; }

  template <class T>
  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, MlpCache<T>* cache) const;
  template <class T>
  Tensor<T> backward(ParamStore<T>& store, const MlpCache<T>& cache, const Tensor<T>& dy) const;
};

struct LayerNorm {
  std::size_t gamma = 0, beta = 0;

  template <class T>
  static LayerNorm create(ParamStore<T>& store, const std::string& name, std::size_t dim);

  template <class T>
  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, LayerNormCache<T>* c) const {
    return layer_norm(x, store.value(gamma), store.value(beta), c);
  }
  template <class T>
  Tensor<T> backward(ParamStore<T>& store, const LayerNormCache<T>& c, const Tensor<T>& dy) const {
    return layer_norm_backward(c, store.value(gamma), dy, store.grad(gamma), store.grad(beta));
  }
};

template <class T>
struct MhaCache {
  Tensor<T> xq, xkv, q, k, v, o;
  std::vector<Tensor<T>> weights;  // per head, queries x keys
};

/// Multi-head attention with input/output projections; the head count
/// splits the model dimension evenly.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t heads = 1;
  std::size_t dim = 0;

  template <class T>
  static MultiHeadAttention create(ParamStore<T>& store, const std::string& name,
                                   std::size_t dim, std::size_t heads, std::mt19937_64& rng,
                                   double out_gain = 1.0);

  template <class T>
  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& xq, const Tensor<T>& xkv,
                    MhaCache<T>* cache) const;

  /// Returns (d xq, d xkv).
  template <class T>
  std::pair<Tensor<T>, Tensor<T>> backward(ParamStore<T>& store, const MhaCache<T>& cache,
                                           const Tensor<T>& dy) const;
};

/// Adds a 1 x C bias row to every row of x.
template <class T>
void add_row_bias(Tensor<T>& x, const Tensor<T>& bias);

/// Accumulates column sums of dy into a 1 x C gradient.
template <class T>
void accumulate_col_sums(const Tensor<T>& dy, Tensor<T>& grad);

}  // namespace clickseg
