// SPDX-License-Identifier: Apache-2.0
//
// Data-parallel inner loops behind a runtime-selected kernel table. Every
// kernel has a portable scalar reference; the AVX2/FMA variants are compiled
// into a separate translation unit and picked when the CPU supports them.
// Set CLICKSEG_SIMD=scalar in the environment to force the reference path.
#pragma once

#include <cstddef>
#include <string_view>

namespace clickseg::simd {

enum class Backend { scalar, avx2 };

std::string_view backend_name(Backend b);

/// True when the AVX2 variants were compiled in and the CPU reports AVX2+FMA.
bool avx2_available();

Backend active_backend();
void set_backend(Backend b);  // throws if the backend is unavailable

template <class T>
struct KernelTable {
  // c[m x n] (+)= op(a) * op(b); op(a) is m x k, op(b) is k x n. All operands
  // are dense row-major; trans_* selects the transposed storage of a/b.
  void (*gemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
               const T* a, const T* b, T* c, bool accumulate);
  T (*dot)(const T* a, const T* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
};

template <class T>
const KernelTable<T>& kernels();  // active backend

template <class T>
const KernelTable<T>& kernels(Backend b);

/// FPS inner loop over structure-of-arrays coordinates:
/// min_sq[i] = min(min_sq[i], |p_i - q|^2), evaluated as dx*dx + dy*dy + dz*dz
/// without fused multiply-add so every backend is bit-identical.
using MinSqDistFn = void (*)(const double* xs, const double* ys, const double* zs, std::size_t n,
                             double qx, double qy, double qz, double* min_sq);
MinSqDistFn min_sq_dist_update();
MinSqDistFn min_sq_dist_update(Backend b);

// Convenience wrappers over the active table.
template <class T>
inline void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
                 const T* b, T* c, bool accumulate) {
  kernels<T>().gemm(ta, tb, m, n, k, a, b, c, accumulate);
}
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  return kernels<T>().dot(a, b, n);
}
template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  kernels<T>().axpy(alpha, x, y, n);
}

namespace detail {
template <class T>
const KernelTable<T>& scalar_table();
void scalar_min_sq_dist(const double*, const double*, const double*, std::size_t, double, double,
                        double, double*);
#ifdef CLICKSEG_HAVE_AVX2
template <class T>
const KernelTable<T>& avx2_table();
void avx2_min_sq_dist(const double*, const double*, const double*, std::size_t, double, double,
                      double, double*);
#endif
}  // namespace detail

}  // namespace clickseg::simd
