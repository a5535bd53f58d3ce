// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "clickseg/simd.hpp"

namespace clickseg::simd {
namespace {

Backend initial_backend() {
  if (const char* env = std::getenv("CLICKSEG_SIMD")) {
    if (std::string(env) == "scalar") return Backend::scalar;
  }
  return avx2_available() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> b{initial_backend()};
  return b;
}

}  // namespace

std::string_view backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

bool avx2_available() {
#if defined(CLICKSEG_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

Backend active_backend() { return current().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_available())
    throw std::runtime_error("AVX2 kernels are not available on this build/CPU");
  current().store(b, std::memory_order_relaxed);
}

template <class T>
const KernelTable<T>& kernels(Backend b) {
#ifdef CLICKSEG_HAVE_AVX2
  if (b == Backend::avx2) {
    if (!avx2_available()) throw std::runtime_error("AVX2 kernels are not available");
    return detail::avx2_table<T>();
  }
#else
  if (b == Backend::avx2) throw std::runtime_error("AVX2 kernels were not compiled in");
#endif
  return detail::scalar_table<T>();
}

template <class T>
const KernelTable<T>& kernels() {
  return kernels<T>(active_backend());
}

template const KernelTable<float>& kernels<float>(Backend);
template const KernelTable<double>& kernels<double>(Backend);
template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();

MinSqDistFn min_sq_dist_update(Backend b) {
#ifdef CLICKSEG_HAVE_AVX2
  if (b == Backend::avx2) {
    if (!avx2_available()) throw std::runtime_error("AVX2 kernels are not available");
    return &detail::avx2_min_sq_dist;
  }
#else
  if (b == Backend::avx2) throw std::runtime_error("AVX2 kernels were not compiled in");
#endif
  return &detail::scalar_min_sq_dist;
}

MinSqDistFn min_sq_dist_update() { return min_sq_dist_update(active_backend()); }

}  // namespace clickseg::simd
