// SPDX-License-Identifier: Apache-2.0

#include "clickseg/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace clickseg {

template <class T>
std::size_t ParamStore<T>::add(const std::string& name, std::size_t rows, std::size_t cols) {
  if (index_.count(name)) throw Error("duplicate parameter name " + name);
  index_[name] = params_.size();
  params_.push_back(Parameter<T>{name, Tensor<T>(rows, cols), Tensor<T>(rows, cols)});
  return params_.size() - 1;
}

template <class T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <class T>
std::size_t ParamStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter " + name);
  return it->second;
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T(0));
}

template <class T>
bool ParamStore<T>::all_finite() const {
  for (const auto& p : params_)
    for (T v : p.value.storage())
      if (!std::isfinite(v)) return false;
  return true;
}

template class ParamStore<float>;
template class ParamStore<double>;

namespace {

constexpr char kMagic[8] = {'C', 'L', 'K', 'S', 'E', 'G', '0', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("checkpoint truncated");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const ParamStore<T>& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(config_json.size()));
  out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params.params()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (T v : p.value.storage()) put_f32(out, static_cast<float>(v));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw Error("not a clickseg checkpoint: " + path.string());
  Checkpoint ck;
  ck.config_json.resize(get_u32(in));
  if (!in.read(ck.config_json.data(), static_cast<std::streamsize>(ck.config_json.size())))
    throw Error("checkpoint truncated");
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name(get_u32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size())))
      throw Error("checkpoint truncated");
    const std::uint32_t rows = get_u32(in), cols = get_u32(in);
    Tensor<float> v(rows, cols);
    for (auto& x : v.storage()) x = get_f32(in);
    ck.tensors.emplace_back(std::move(name), std::move(v));
  }
  return ck;
}

template <class T>
void load_parameters(const Checkpoint& ckpt, ParamStore<T>& params) {
  if (ckpt.tensors.size() != params.size())
    throw Error("checkpoint tensor count does not match the model");
  for (const auto& [name, v] : ckpt.tensors) {
    auto& dst = params.value(params.find(name));
    if (dst.rows() != v.rows() || dst.cols() != v.cols())
      throw Error("checkpoint shape mismatch for " + name);
    for (std::size_t i = 0; i < v.size(); ++i) dst.data()[i] = static_cast<T>(v.data()[i]);
  }
}

template void save_checkpoint<float>(const std::filesystem::path&, const std::string&,
                                     const ParamStore<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const std::string&,
                                      const ParamStore<double>&);
template void load_parameters<float>(const Checkpoint&, ParamStore<float>&);
template void load_parameters<double>(const Checkpoint&, ParamStore<double>&);

}  // namespace clickseg
