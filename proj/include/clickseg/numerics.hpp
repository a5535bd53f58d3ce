// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels with hand-written backward passes, and the central finite
// difference oracle used to check them. Kernels are templated on the scalar
// type and explicitly instantiated for float and double.
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "clickseg/geometry.hpp"
#include "clickseg/tensor.hpp"

namespace clickseg {

enum class Activation { relu, gelu };

template <class T>
T activate(Activation a, T x);
template <class T>
T activate_grad(Activation a, T x);  // derivative at the pre-activation x

template <class T>
inline T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

/// Row-wise softmax with max subtraction.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Given y = softmax_rows(x) and dL/dy, returns dL/dx.
template <class T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy);

/// softmax(Q K^T / sqrt(D)) V. `weights`, when non-null, receives the K x N
/// attention matrix.
template <class T>
Tensor<T> attention(const Tensor<T>& queries, const Tensor<T>& keys, const Tensor<T>& values,
                    Tensor<T>* weights = nullptr);

template <class T>
struct AttentionGrads {
  Tensor<T> queries, keys, values;
};

template <class T>
AttentionGrads<T> attention_backward(const Tensor<T>& queries, const Tensor<T>& keys,
                                     const Tensor<T>& values, const Tensor<T>& weights,
                                     const Tensor<T>& d_out);

/// Per axis a and band j: (sin(2^j pi p_a), cos(2^j pi p_a)), laid out as
/// [axis][band][sin, cos] and zero-padded to out_dim. Requires out_dim >= 6B.
template <class T>
Tensor<T> fourier_pe(std::span<const Vec3> positions, int bands, std::size_t out_dim);

template <class T>
struct LayerNormCache {
  Tensor<T> xhat;
  std::vector<T> rstd;
};

/// Normalizes each row, then scales by gamma and shifts by beta (1 x D each).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     LayerNormCache<T>* cache, T eps = T(1e-5));

template <class T>
Tensor<T> layer_norm_backward(const LayerNormCache<T>& cache, const Tensor<T>& gamma,
                              const Tensor<T>& dy, Tensor<T>& d_gamma, Tensor<T>& d_beta);

/// Central differences (f(t + h e_i) - f(t - h e_i)) / 2h for every coordinate.
/// Throws Error if f returns a non-finite value.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, double h = 1e-5);

/// Central difference for a single coordinate.
double finite_diff_coord(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> theta, std::size_t i, double h = 1e-5);

}  // namespace clickseg
