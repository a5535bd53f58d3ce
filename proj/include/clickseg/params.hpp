// SPDX-License-Identifier: Apache-2.0
//
// Named parameter tensors with gradient buffers, and the checkpoint archive.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "clickseg/tensor.hpp"

namespace clickseg {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Flat, insertion-ordered collection. Modules refer to parameters by index,
/// which stays valid for the lifetime of the store.
template <class T>
class ParamStore {
 public:
  std::size_t add(const std::string& name, std::size_t rows, std::size_t cols);

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  Tensor<T>& value(std::size_t i) { return params_[i].value; }
  const Tensor<T>& value(std::size_t i) const { return params_[i].value; }
  Tensor<T>& grad(std::size_t i) { return params_[i].grad; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  std::size_t find(const std::string& name) const;  // throws when missing
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }

  void zero_grad();
  bool all_finite() const;

  /// Copies values by name; shapes must match and every name must exist.
  template <class U>
  void assign_from(const ParamStore<U>& other) {
    if (other.size() != size()) throw Error("parameter count mismatch");
    for (const auto& p : other.params()) {
      auto& dst = params_[find(p.name)].value;
      if (!dst.same_shape(Tensor<T>(p.value.rows(), p.value.cols())))
        throw Error("shape mismatch for parameter " + p.name);
      for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] = static_cast<T>(p.value.data()[i]);
    }
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Checkpoint archive: "CLKSEG01" magic, u32 config length, config JSON bytes,
/// u32 tensor count, then per tensor u32 name length, name, u32 rows, u32 cols
/// and rows*cols little-endian float32 values.
struct Checkpoint {
  std::string config_json;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const ParamStore<T>& params);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <class T>
void load_parameters(const Checkpoint& ckpt, ParamStore<T>& params);

}  // namespace clickseg
