// Copyright 2026 The vilas Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "vilas/numerics/tensor.hpp"
#include "vilas/rng.hpp"

namespace vilas {

enum class Init { kZeros, kOnes, kXavier, kNormal };

// Named learnable tensors. Names are dot-separated paths mirroring module
// structure; std::map keeps iteration lexicographic.
template <class T>
class ParamStore {
 public:
  // Creates (or replaces) a parameter. The values depend only on
  // (seed, name, shape, init), never on creation order.
  Tensor<T>& create(const std::string& name, Shape shape, Init init,
                    std::uint64_t seed, double scale = 0.02) {
    const std::size_t n = shape_numel(shape);
    std::vector<T> v(n, T(0));
    Rng rng(mix_seed(seed, name));
    switch (init) {
      case Init::kZeros:
        break;
      case Init::kOnes:
        std::fill(v.begin(), v.end(), T(1));
        break;
      case Init::kXavier: {
        // fan_in/fan_out: [in, out] matrices, [out, in, k...] conv kernels.
        double fan_in = 1, fan_out = 1;
        if (shape.size() == 2) {
          fan_in = static_cast<double>(shape[0]);
          fan_out = static_cast<double>(shape[1]);
        } else if (shape.size() >= 3) {
          const double rf = static_cast<double>(n / (shape[0] * shape[1]));
          fan_in = static_cast<double>(shape[1]) * rf;
          fan_out = static_cast<double>(shape[0]) * rf;
        }
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& x : v) x = static_cast<T>(rng.uniform(-a, a));
        break;
      }
      case Init::kNormal:
        for (auto& x : v) x = static_cast<T>(scale * rng.normal());
        break;
    }
    auto [it, _] = params_.insert_or_assign(name, Tensor<T>(std::move(shape), std::move(v), true));
    return it->second;
  }

  void set(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    params_.insert_or_assign(name, std::move(t));
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  const Tensor<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("parameter not found: " + name);
    return it->second;
  }
  Tensor<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("parameter not found: " + name);
    return it->second;
  }

  void erase(const std::string& name) { params_.erase(name); }

  std::size_t size() const { return params_.size(); }
  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : params_) out.push_back(k);
    return out;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  // Deep copy with value conversion (e.g. f32 training weights promoted to
  // f64 for gradient checks).
  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, t] : params_) {
      std::vector<U> v(t.values().begin(), t.values().end());
      out.set(k, Tensor<U>(t.shape(), std::move(v), true));
    }
    return out;
  }

  ParamStore clone() const { return cast<T>(); }

 private:
  std::map<std::string, Tensor<T>> params_;
};

namespace detail {

template <class V>
void append_le(std::vector<char>& buf, V v) {
  static_assert(std::is_trivially_copyable_v<V>);
  char bytes[sizeof(V)];
  std::memcpy(bytes, &v, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  buf.insert(buf.end(), bytes, bytes + sizeof(V));
}

template <class V>
V read_le(const char* p) {
  char bytes[sizeof(V)];
  std::memcpy(bytes, p, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  V v;
  std::memcpy(&v, bytes, sizeof(V));
  return v;
}

inline std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

template <class T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

}  // namespace detail

// Checkpoint directory: meta.json lists {name, shape, dtype, byte_offset} in
// lexicographic order; weights.bin concatenates the little-endian values in
// the same order.
template <class T>
void save_checkpoint(const ParamStore<T>& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format"] = "vilas-checkpoint";
  meta["version"] = 1;
  meta["params"] = nlohmann::json::array();
  std::vector<char> buf;
  for (const auto& [name, t] : params) {
    meta["params"].push_back({{"name", name},
                              {"shape", t.shape()},
                              {"dtype", detail::dtype_name<T>()},
                              {"byte_offset", buf.size()}});
    for (T v : t.values()) detail::append_le(buf, v);
  }
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw RuntimeError("failed writing " + (dir / "weights.bin").string());
  }
  std::ofstream out(dir / "meta.json", std::ios::trunc);
  out << meta.dump(1) << '\n';
}

template <class T>
ParamStore<T> load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "meta.json")) {
    throw RuntimeError("checkpoint not found: " + dir.string());
  }
  nlohmann::json meta;
  try {
    std::ifstream in(dir / "meta.json");
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint meta.json: " + std::string(e.what()));
  }
  const auto blob = detail::slurp(dir / "weights.bin");
  ParamStore<T> out;
  try {
    for (const auto& p : meta.at("params")) {
      const auto name = p.at("name").get<std::string>();
      const auto shape = p.at("shape").get<Shape>();
      const auto dtype = p.at("dtype").get<std::string>();
      const auto off = p.at("byte_offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
      if (!width) throw FormatError("checkpoint: unknown dtype " + dtype);
      if (off + n * width > blob.size()) {
        throw FormatError("checkpoint: weights.bin truncated at " + name);
      }
      std::vector<T> v(n);
      for (std::size_t i = 0; i < n; ++i) {
        const char* src = blob.data() + off + i * width;
        v[i] = width == 4 ? static_cast<T>(detail::read_le<float>(src))
                          : static_cast<T>(detail::read_le<double>(src));
      }
      out.set(name, Tensor<T>(shape, std::move(v), true));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint meta.json: " + std::string(e.what()));
  }
  return out;
}

}  // namespace vilas
