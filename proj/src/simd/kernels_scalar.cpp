// SPDX-License-Identifier: Apache-2.0
//
// Reference kernels. These define the semantics the SIMD variants are tested
// against; keep them plain.

#include "clickseg/simd.hpp"

#include <algorithm>

namespace clickseg::simd::detail {
namespace {

template <class T>
void gemm_ref(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
              const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ta ? a[p * m + i] : a[i * k + p];
      if (tb) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      } else {
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <class T>
T dot_ref(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
void axpy_ref(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

template <class T>
const KernelTable<T>& scalar_table() {
  static const KernelTable<T> table{&gemm_ref<T>, &dot_ref<T>, &axpy_ref<T>};
  return table;
}

template const KernelTable<float>& scalar_table<float>();
template const KernelTable<double>& scalar_table<double>();

void scalar_min_sq_dist(const double* xs, const double* ys, const double* zs, std::size_t n,
                        double qx, double qy, double qz, double* min_sq) {
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - qx;
    const double dy = ys[i] - qy;
    const double dz = zs[i] - qz;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < min_sq[i]) min_sq[i] = d;
  }
}

}  // namespace clickseg::simd::detail
