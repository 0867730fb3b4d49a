#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpsf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

// One named f32 tensor inside the "MPSF" checkpoint container.
struct TensorRecord {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;

  size_t element_count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

inline constexpr uint32_t kCheckpointVersion = 1;

// Container layout: magic "MPSF", u32 version, then per tensor
// (u32 name length, name bytes, u32 rank, u32 dims[rank], f32 data
// row-major) until end of file.
inline void write_checkpoint(const std::string& path, const std::vector<TensorRecord>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write("MPSF", 4);
  uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  for (const auto& t : tensors) {
    uint32_t nlen = static_cast<uint32_t>(t.name.size());
    out.write(reinterpret_cast<const char*>(&nlen), 4);
    out.write(t.name.data(), nlen);
    uint32_t rank = static_cast<uint32_t>(t.dims.size());
    out.write(reinterpret_cast<const char*>(&rank), 4);
    for (uint32_t d : t.dims) out.write(reinterpret_cast<const char*>(&d), 4);
    if (t.data.size() != t.element_count())
      throw std::runtime_error("tensor " + t.name + ": data size does not match dims");
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<TensorRecord> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MPSF", 4) != 0)
    throw std::runtime_error(path + ": bad magic, not an MPSF checkpoint");
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (!in || version != kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));

  std::vector<TensorRecord> tensors;
  for (;;) {
    uint32_t nlen = 0;
    in.read(reinterpret_cast<char*>(&nlen), 4);
    if (in.eof()) break;
    if (!in || nlen > (1u << 20)) throw std::runtime_error(path + ": corrupt tensor name length");
    TensorRecord t;
    t.name.resize(nlen);
    in.read(t.name.data(), nlen);
    uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 4);
    if (!in || rank > 8) throw std::runtime_error(path + ": corrupt tensor rank for " + t.name);
    t.dims.resize(rank);
    for (uint32_t r = 0; r < rank; ++r) in.read(reinterpret_cast<char*>(&t.dims[r]), 4);
    size_t count = t.element_count();
    if (count > (1ull << 31)) throw std::runtime_error(path + ": tensor too large: " + t.name);
    t.data.resize(count);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw std::runtime_error(path + ": truncated tensor data for " + t.name);
    tensors.push_back(std::move(t));
  }
  return tensors;
}

inline const TensorRecord* find_tensor(const std::vector<TensorRecord>& tensors,
                                       const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

}  // namespace mpsf
