// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clickseg/simd.hpp"

namespace clickseg {

/// Library-wide error type. Messages name the violated precondition.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw Error("tensor data length does not match shape");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, T(0));
  }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

 private:
  void check_same(const Tensor& o, const char* what) const {
    if (!same_shape(o)) throw Error(std::string("tensor shape mismatch in ") + what);
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// op(a) * op(b) through the active kernel backend.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t ka = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (ka != kb) throw Error("dimension mismatch in matmul");
  Tensor<T> c(m, n);
  simd::gemm<T>(trans_a, trans_b, m, n, ka, a.data(), b.data(), c.data(), false);
  return c;
}

/// c += op(a) * op(b)
template <class T>
void matmul_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool trans_a = false,
                bool trans_b = false) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t ka = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (ka != kb || c.rows() != m || c.cols() != n) throw Error("dimension mismatch in matmul");
  simd::gemm<T>(trans_a, trans_b, m, n, ka, a.data(), b.data(), c.data(), true);
}

/// Column block [c0, c0 + width) of `src`.
template <class T>
Tensor<T> slice_cols(const Tensor<T>& src, std::size_t c0, std::size_t width) {
  Tensor<T> out(src.rows(), width);
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = src(r, c0 + c);
  return out;
}

/// dst[:, c0:c0+width] += src
template <class T>
void add_into_cols(Tensor<T>& dst, const Tensor<T>& src, std::size_t c0) {
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < src.cols(); ++c) dst(r, c0 + c) += src(r, c);
}

template <class T>
Tensor<T> concat_cols(std::span<const Tensor<T>* const> parts) {
  std::size_t cols = 0, rows = parts.empty() ? 0 : parts.front()->rows();
  for (auto* p : parts) {
    if (p->rows() != rows) throw Error("row mismatch in concat_cols");
    cols += p->cols();
  }
  Tensor<T> out(rows, cols);
  std::size_t c0 = 0;
  for (auto* p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(p->row(r).begin(), p->row(r).end(), out.row(r).begin() + c0);
    c0 += p->cols();
  }
  return out;
}

}  // namespace clickseg
