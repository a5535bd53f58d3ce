// SPDX-License-Identifier: Apache-2.0

#include "clickseg/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace clickseg {

namespace {
template <class T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2 / pi)
template <class T>
constexpr T kGeluA = T(0.044715);
}  // namespace

template <class T>
T activate(Activation a, T x) {
  if (a == Activation::relu) return x > 0 ? x : T(0);
  const T u = kGeluC<T> * (x + kGeluA<T> * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
T activate_grad(Activation a, T x) {
  if (a == Activation::relu) return x > 0 ? T(1) : T(0);
  const T u = kGeluC<T> * (x + kGeluA<T> * x * x * x);
  const T t = std::tanh(u);
  const T du = kGeluC<T> * (T(1) + T(3) * kGeluA<T> * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto out = y.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T sum = 0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - mx);
      sum += out[c];
    }
    for (auto& v : out) v /= sum;
  }
  return y;
}

template <class T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.rows(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const T s = simd::dot(y.row(r).data(), dy.row(r).data(), y.cols());
    for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (dy(r, c) - s);
  }
  return dx;
}

template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    Tensor<T>* weights) {
  if (q.cols() != k.cols()) throw Error("attention: query/key dimension mismatch");
  if (k.rows() != v.rows()) throw Error("attention: key/value count mismatch");
  if (q.rows() == 0 || k.rows() == 0) throw Error("attention: empty queries or keys");
  Tensor<T> s = matmul(q, k, false, true);
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  for (auto& e : s.storage()) e *= scale;
  Tensor<T> a = softmax_rows(s);
  Tensor<T> out = matmul(a, v);
  if (weights) *weights = std::move(a);
  return out;
}

template <class T>
AttentionGrads<T> attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const Tensor<T>& a, const Tensor<T>& d_out) {
  AttentionGrads<T> g;
  Tensor<T> da = matmul(d_out, v, false, true);  // K x N
  g.values = matmul(a, d_out, true, false);      // N x Dv
  Tensor<T> ds = softmax_rows_backward(a, da);
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  for (auto& e : ds.storage()) e *= scale;
  g.queries = matmul(ds, k);              // K x D
  g.keys = matmul(ds, q, true, false);    // N x D
  return g;
}

template <class T>
Tensor<T> fourier_pe(std::span<const Vec3> positions, int bands, std::size_t out_dim) {
  if (bands < 0) throw Error("fourier_pe: negative band count");
  if (out_dim < static_cast<std::size_t>(6 * bands))
    throw Error("fourier_pe: output dimension smaller than 6 * bands");
  Tensor<T> out(positions.size(), out_dim);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      for (int j = 0; j < bands; ++j) {
        const double w = std::ldexp(std::numbers::pi, j);
        const std::size_t c = static_cast<std::size_t>(a * 2 * bands + 2 * j);
        out(i, c) = static_cast<T>(std::sin(w * positions[i][a]));
        out(i, c + 1) = static_cast<T>(std::cos(w * positions[i][a]));
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     LayerNormCache<T>* cache, T eps) {
  const std::size_t d = x.cols();
  if (gamma.size() != d || beta.size() != d) throw Error("layer_norm: parameter size mismatch");
  Tensor<T> y(x.rows(), d);
  Tensor<T> xhat(x.rows(), d);
  std::vector<T> rstd(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    T mean = 0;
    for (T v : in) mean += v;
    mean /= static_cast<T>(d);
    T var = 0;
    for (T v : in) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (in[c] - mean) * rstd[r];
      y(r, c) = xhat(r, c) * gamma.data()[c] + beta.data()[c];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <class T>
Tensor<T> layer_norm_backward(const LayerNormCache<T>& cache, const Tensor<T>& gamma,
                              const Tensor<T>& dy, Tensor<T>& d_gamma, Tensor<T>& d_beta) {
  const std::size_t d = dy.cols();
  Tensor<T> dx(dy.rows(), d);
  std::vector<T> dxhat(d);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    T m1 = 0, m2 = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const T xh = cache.xhat(r, c);
      d_gamma.data()[c] += dy(r, c) * xh;
      d_beta.data()[c] += dy(r, c);
      dxhat[c] = dy(r, c) * gamma.data()[c];
      m1 += dxhat[c];
      m2 += dxhat[c] * xh;
    }
    m1 /= static_cast<T>(d);
    m2 /= static_cast<T>(d);
    for (std::size_t c = 0; c < d; ++c)
      dx(r, c) = cache.rstd[r] * (dxhat[c] - m1 - cache.xhat(r, c) * m2);
  }
  return dx;
}

double finite_diff_coord(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> theta, std::size_t i, double h) {
  if (!(h > 0)) throw Error("finite difference step must be positive");
  std::vector<double> t(theta.begin(), theta.end());
  t[i] = theta[i] + h;
  const double fp = f(t);
  t[i] = theta[i] - h;
  const double fm = f(t);
  if (!std::isfinite(fp) || !std::isfinite(fm))
    throw Error("finite difference: objective is not finite");
  return (fp - fm) / (2 * h);
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, double h) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) g[i] = finite_diff_coord(f, theta, i, h);
  return g;
}

#define CLICKSEG_INSTANTIATE(T)                                                              \
  template T activate<T>(Activation, T);                                                     \
  template T activate_grad<T>(Activation, T);                                                \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                      \
  template Tensor<T> softmax_rows_backward<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                  Tensor<T>*);                                               \
  template AttentionGrads<T> attention_backward<T>(const Tensor<T>&, const Tensor<T>&,       \
                                                   const Tensor<T>&, const Tensor<T>&,       \
                                                   const Tensor<T>&);                        \
  template Tensor<T> fourier_pe<T>(std::span<const Vec3>, int, std::size_t);                 \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   LayerNormCache<T>*, T);                                   \
  template Tensor<T> layer_norm_backward<T>(const LayerNormCache<T>&, const Tensor<T>&,      \
                                            const Tensor<T>&, Tensor<T>&, Tensor<T>&);

CLICKSEG_INSTANTIATE(float)
CLICKSEG_INSTANTIATE(double)
#undef CLICKSEG_INSTANTIATE

}  // namespace clickseg
