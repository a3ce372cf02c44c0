// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Checkpoint layout:
//   UTF-8 JSON manifest: [{"name": ..., "shape": [...], "dtype": "float32"}, ...]
//   one NUL byte
//   raw little-endian buffers, concatenated in manifest order

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "selftrain/autodiff/adam.hpp"
#include "selftrain/core/error.hpp"

namespace selftrain {

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "float32" : "float64";
}

namespace detail {

template <class U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
    Bits b;
    std::memcpy(&b, &v, sizeof b);
    b = __builtin_bswap64(static_cast<std::uint64_t>(b)) >> (64 - 8 * sizeof(U));
    std::memcpy(&v, &b, sizeof b);
  }
  return v;
}

}  // namespace detail

template <class T>
std::string serialize_checkpoint(const std::vector<Param<T>>& params) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& p : params)
    manifest.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"dtype", dtype_name<T>()}});
  std::string out = manifest.dump();
  out.push_back('\0');
  for (const auto& p : params)
    for (T v : p.tensor.data()) {
      const T le = detail::byteswap_if_big(v);
      out.append(reinterpret_cast<const char*>(&le), sizeof le);
    }
  return out;
}

// Overwrites the values of `params` from `bytes`. Names, order and shapes
// must agree with the manifest.
template <class T>
void deserialize_checkpoint(std::string_view bytes, std::vector<Param<T>>& params) {
  const auto nul = bytes.find('\0');
  if (nul == std::string_view::npos) throw FormatError("checkpoint: missing manifest terminator");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(0, nul));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  if (!manifest.is_array() || manifest.size() != params.size())
    throw FormatError("checkpoint: manifest lists " + std::to_string(manifest.size()) +
                      " tensors, model has " + std::to_string(params.size()));
  std::size_t offset = nul + 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = manifest[i];
    auto& p = params[i];
    if (entry.at("name").get<std::string>() != p.name)
      throw FormatError("checkpoint: expected tensor '" + p.name + "', found '" +
                        entry.at("name").get<std::string>() + "'");
    if (entry.at("shape").get<Shape>() != p.tensor.shape())
      throw FormatError("checkpoint: shape mismatch for '" + p.name + "'");
    if (entry.at("dtype").get<std::string>() != dtype_name<T>())
      throw FormatError("checkpoint: dtype mismatch for '" + p.name + "'");
    const std::size_t nbytes = p.tensor.numel() * sizeof(T);
    if (offset + nbytes > bytes.size()) throw FormatError("checkpoint: truncated buffer for '" + p.name + "'");
    auto data = p.tensor.data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      T v;
      std::memcpy(&v, bytes.data() + offset + j * sizeof(T), sizeof(T));
      data[j] = detail::byteswap_if_big(v);
    }
    offset += nbytes;
  }
  if (offset != bytes.size()) throw FormatError("checkpoint: trailing bytes after last tensor");
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const std::vector<Param<T>>& params) {
  write_file_bytes(path, serialize_checkpoint(params));
}

template <class T>
void load_checkpoint(const std::filesystem::path& path, std::vector<Param<T>>& params) {
  const auto bytes = read_file_bytes(path);
  deserialize_checkpoint<T>(bytes, params);
}

}  // namespace selftrain
