// SPDX-License-Identifier: Apache-2.0
//
// AVX2 + FMA kernel variants. Compiled with -mavx2 -mfma; only reached through
// the dispatch table after a CPU feature check.

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "clickseg/simd.hpp"

namespace clickseg::simd::detail {
namespace {

template <class T>
struct Avx2;

template <>
struct Avx2<float> {
  using reg = __m256;
  static constexpr std::size_t lanes = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg set1(float v) { return _mm256_set1_ps(v); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

template <>
struct Avx2<double> {
  using reg = __m256d;
  static constexpr std::size_t lanes = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg set1(double v) { return _mm256_set1_pd(v); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

template <class T>
T dot_avx2(const T* a, const T* b, std::size_t n) {
  using V = Avx2<T>;
  constexpr std::size_t L = V::lanes;
  typename V::reg s0 = V::zero(), s1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * L <= n; i += 2 * L) {
    s0 = V::fma(V::load(a + i), V::load(b + i), s0);
    s1 = V::fma(V::load(a + i + L), V::load(b + i + L), s1);
  }
  for (; i + L <= n; i += L) s0 = V::fma(V::load(a + i), V::load(b + i), s0);
  T s = V::hsum(s0) + V::hsum(s1);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
void axpy_avx2(T alpha, const T* x, T* y, std::size_t n) {
  using V = Avx2<T>;
  constexpr std::size_t L = V::lanes;
  const auto av = V::set1(alpha);
  std::size_t i = 0;
  for (; i + L <= n; i += L) V::store(y + i, V::fma(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Register-blocked C[4 x 2L] += A[4 x k] * B[k x 2L], B rows contiguous with stride ldb.
template <class T>
void gemm_avx2(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
               const T* b, T* c, bool accumulate) {
  using V = Avx2<T>;
  constexpr std::size_t L = V::lanes;
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;

  if (!ta && tb) {
    // Both operands walk contiguous rows: every entry is a dot product.
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_avx2(a + i * k, b + j * k, k);
    return;
  }

  thread_local std::vector<T> packed;
  const T* bm = b;
  if (tb) {
    packed.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) packed[p * n + j] = b[j * k + p];
    bm = packed.data();
  }
  auto a_at = [&](std::size_t i, std::size_t p) { return ta ? a[p * m + i] : a[i * k + p]; };

  const std::size_t n_blk = n - n % (2 * L);
  const std::size_t m_blk = m - m % 4;
  for (std::size_t j0 = 0; j0 < n_blk; j0 += 2 * L) {
    for (std::size_t i0 = 0; i0 < m_blk; i0 += 4) {
      typename V::reg acc[4][2];
      for (int r = 0; r < 4; ++r) {
        acc[r][0] = V::load(c + (i0 + r) * n + j0);
        acc[r][1] = V::load(c + (i0 + r) * n + j0 + L);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const auto b0 = V::load(bm + p * n + j0);
        const auto b1 = V::load(bm + p * n + j0 + L);
        for (int r = 0; r < 4; ++r) {
          const auto av = V::set1(a_at(i0 + r, p));
          acc[r][0] = V::fma(av, b0, acc[r][0]);
          acc[r][1] = V::fma(av, b1, acc[r][1]);
        }
      }
      for (int r = 0; r < 4; ++r) {
        V::store(c + (i0 + r) * n + j0, acc[r][0]);
        V::store(c + (i0 + r) * n + j0 + L, acc[r][1]);
      }
    }
  }
  // Column tail for the blocked rows, then every leftover row in full.
  if (n_blk < n) {
    for (std::size_t i = 0; i < m_blk; ++i)
      for (std::size_t p = 0; p < k; ++p)
        axpy_avx2(a_at(i, p), bm + p * n + n_blk, c + i * n + n_blk, n - n_blk);
  }
  for (std::size_t i = m_blk; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) axpy_avx2(a_at(i, p), bm + p * n, c + i * n, n);
}

}  // namespace

template <class T>
const KernelTable<T>& avx2_table() {
  static const KernelTable<T> table{&gemm_avx2<T>, &dot_avx2<T>, &axpy_avx2<T>};
  return table;
}

template const KernelTable<float>& avx2_table<float>();
template const KernelTable<double>& avx2_table<double>();

void avx2_min_sq_dist(const double* xs, const double* ys, const double* zs, std::size_t n,
                      double qx, double qy, double qz, double* min_sq) {
  const __m256d vx = _mm256_set1_pd(qx), vy = _mm256_set1_pd(qy), vz = _mm256_set1_pd(qz);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(xs + i), vx);
    const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(ys + i), vy);
    const __m256d dz = _mm256_sub_pd(_mm256_loadu_pd(zs + i), vz);
    // Same association as the scalar reference: (dx*dx + dy*dy) + dz*dz.
    const __m256d d = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy)),
                                    _mm256_mul_pd(dz, dz));
    _mm256_storeu_pd(min_sq + i, _mm256_min_pd(d, _mm256_loadu_pd(min_sq + i)));
  }
  scalar_min_sq_dist(xs + i, ys + i, zs + i, n - i, qx, qy, qz, min_sq + i);
}

}  // namespace clickseg::simd::detail
