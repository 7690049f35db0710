#pragma once

// Binary container: magic "MEDTSCKP", u32 version, u64 meta length + JSON
// metadata, u64 tensor count, then per tensor u32 name length, name,
// i64 rows, i64 cols and rows*cols little-endian doubles (row-major).

#include "medts/autograd/nn.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

namespace medts::runner {

inline constexpr char kCheckpointMagic[8] = {'M', 'E', 'D', 'T', 'S', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Matrix> tensors;
};

namespace detail {

template <typename T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated checkpoint: " + path);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put(os, kCheckpointVersion);
  const std::string meta = ck.meta.dump();
  detail::put(os, static_cast<std::uint64_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  detail::put(os, static_cast<std::uint64_t>(ck.tensors.size()));
  for (const auto& [name, m] : ck.tensors) {
    detail::put(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put(os, static_cast<std::int64_t>(m.rows()));
    detail::put(os, static_cast<std::int64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  const auto version = detail::get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  Checkpoint ck;
  const auto meta_len = detail::get<std::uint64_t>(is, path);
  if (meta_len > (1u << 30)) throw std::runtime_error("corrupt checkpoint metadata: " + path);
  std::string meta(meta_len, '\0');
  if (!is.read(meta.data(), static_cast<std::streamsize>(meta_len))) throw std::runtime_error("truncated checkpoint: " + path);
  ck.meta = nlohmann::json::parse(meta);
  const auto n = detail::get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = detail::get<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("truncated checkpoint: " + path);
    const auto rows = detail::get<std::int64_t>(is, path);
    const auto cols = detail::get<std::int64_t>(is, path);
    if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 32)) throw std::runtime_error("corrupt tensor shape in " + path);
    Matrix m(rows, cols);
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw std::runtime_error("truncated checkpoint: " + path);
    }
    ck.tensors.emplace(std::move(name), std::move(m));
  }
  return ck;
}

inline std::map<std::string, Matrix> snapshot(const ag::ParameterStore& store) {
  std::map<std::string, Matrix> out;
  for (const auto& [name, p] : store)
    if (p.trainable) out.emplace(name, p.value);
  return out;
}

/// Copies tensors into the store; names and shapes must match exactly.
inline void restore(ag::ParameterStore& store, const std::map<std::string, Matrix>& tensors) {
  std::size_t trainable = 0;
  for (auto& [name, p] : store) {
    if (!p.trainable) continue;
    ++trainable;
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("checkpoint is missing parameter " + name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      throw std::invalid_argument("shape mismatch for parameter " + name + ": checkpoint " +
                                  std::to_string(it->second.rows()) + "x" + std::to_string(it->second.cols()) +
                                  ", model " + std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    p.value = it->second;
  }
  if (trainable != tensors.size()) throw std::invalid_argument("checkpoint holds parameters the model does not have");
}

}  // namespace medts::runner
