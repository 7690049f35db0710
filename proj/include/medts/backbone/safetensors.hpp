#pragma once

// Reader/writer for the safetensors container: an 8-byte little-endian header
// length, a JSON header mapping tensor names to dtype/shape/byte range, then
// the raw little-endian tensor bytes.

#include "medts/core/series.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::backbone {

struct NamedTensor {
  std::vector<Index> shape;
  std::vector<double> data;  // row-major

  Matrix as_matrix() const {
    Index rows = 1, cols = 1;
    if (shape.size() == 1) {
      cols = shape[0];
    } else if (shape.size() == 2) {
      rows = shape[0];
      cols = shape[1];
    } else if (!shape.empty()) {
      throw std::runtime_error("only 1-D and 2-D tensors map onto matrices");
    }
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
  }
};

namespace detail {

inline float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1F;
  std::uint32_t mant = h & 0x3FF;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3FF;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline std::map<std::string, NamedTensor> read_safetensors(const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::uint64_t header_len = 0;
  f.read(reinterpret_cast<char*>(&header_len), 8);
  if (!f || header_len > (std::uint64_t{1} << 30)) throw std::runtime_error("malformed safetensors header in " + path);
  std::string header(header_len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(header_len));
  const auto meta = nlohmann::json::parse(header);
  const std::streamoff base = static_cast<std::streamoff>(8 + header_len);
  std::map<std::string, NamedTensor> out;
  for (auto it = meta.begin(); it != meta.end(); ++it) {
    if (it.key() == "__metadata__") continue;
    const auto& e = it.value();
    const std::string dtype = e.at("dtype");
    NamedTensor t;
    Index count = 1;
    for (const auto& d : e.at("shape")) {
      t.shape.push_back(d.get<Index>());
      count *= t.shape.back();
    }
    const auto begin = e.at("data_offsets").at(0).get<std::uint64_t>();
    const auto end = e.at("data_offsets").at(1).get<std::uint64_t>();
    std::vector<char> raw(end - begin);
    f.seekg(base + static_cast<std::streamoff>(begin));
    f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!f) throw std::runtime_error("truncated tensor " + it.key());
    t.data.resize(static_cast<std::size_t>(count));
    auto expect = [&](std::size_t width) {
      if (raw.size() != width * static_cast<std::size_t>(count)) throw std::runtime_error("size mismatch for " + it.key());
    };
    if (dtype == "F64") {
      expect(8);
      std::memcpy(t.data.data(), raw.data(), raw.size());
    } else if (dtype == "F32") {
      expect(4);
      for (Index i = 0; i < count; ++i) {
        float v;
        std::memcpy(&v, raw.data() + 4 * i, 4);
        t.data[static_cast<std::size_t>(i)] = v;
      }
    } else if (dtype == "F16" || dtype == "BF16") {
      expect(2);
      for (Index i = 0; i < count; ++i) {
        std::uint16_t h;
        std::memcpy(&h, raw.data() + 2 * i, 2);
        t.data[static_cast<std::size_t>(i)] = dtype == "F16"
                                                  ? detail::half_to_float(h)
                                                  : std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
      }
    } else {
      throw std::runtime_error("unsupported dtype " + dtype + " for " + it.key());
    }
    out.emplace(it.key(), std::move(t));
  }
  return out;
}

/// Writes F32 (default) or F64 tensors.
inline void write_safetensors(const std::string& path, const std::map<std::string, NamedTensor>& tensors,
                              bool f64 = false) {
  nlohmann::json meta = nlohmann::json::object();
  std::uint64_t offset = 0;
  const std::size_t width = f64 ? 8 : 4;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t bytes = t.data.size() * width;
    meta[name] = {{"dtype", f64 ? "F64" : "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string header = meta.dump();
  while (header.size() % 8 != 0) header += ' ';
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  const std::uint64_t len = header.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [_, t] : tensors) {
    if (f64) {
      f.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 8));
    } else {
      for (double v : t.data) {
        const float x = static_cast<float>(v);
        f.write(reinterpret_cast<const char*>(&x), 4);
      }
    }
  }
}

}  // namespace medts::backbone
