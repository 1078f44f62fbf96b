#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "uagdet/errors.hpp"
#include "uagdet/numeric/tensor.hpp"

namespace uagdet {

// Little-endian primitive I/O shared by the checkpoint and scene formats.
namespace le {

template <typename T>
T byteswap_if_needed(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <typename T>
void write(std::ostream& os, T v) {
  v = byteswap_if_needed(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw InputError("unexpected end of binary stream");
  return byteswap_if_needed(v);
}

inline void write_doubles(std::ostream& os, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) write(os, v);
  }
}

inline void read_doubles(std::istream& is, std::span<double> out) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(out.size() * sizeof(double)));
    if (!is) throw InputError("unexpected end of binary stream");
  } else {
    for (double& v : out) v = read<double>(is);
  }
}

inline void write_string(std::ostream& os, const std::string& s) {
  write<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::size_t max_len = 1 << 20) {
  const auto n = read<std::uint32_t>(is);
  if (n > max_len) throw InputError("string length out of range in binary stream");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw InputError("unexpected end of binary stream");
  return s;
}

}  // namespace le

// Checkpoint container:
//   magic "UAGCKPT\0" | u32 version | u32 entry count |
//   entries { string name | u32 rank | u64 extents[rank] | f64 values[] }
// All integers and doubles little-endian.
inline constexpr char kCheckpointMagic[8] = {'U', 'A', 'G', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& os, std::span<const ParamRef> params) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  le::write<std::uint32_t>(os, kCheckpointVersion);
  le::write<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    le::write_string(os, p.name);
    const Shape& shape = p.param->value.shape();
    le::write<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) le::write<std::uint64_t>(os, e);
    le::write_doubles(os, p.param->value.data());
  }
  if (!os) throw InputError("checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, std::span<const ParamRef> params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("checkpoint: cannot open " + path + " for writing");
  save_checkpoint(os, params);
}

/// Loads values into `params` by name. Every parameter must be present with a
/// matching shape; extra entries in the file are rejected too.
inline void load_checkpoint(std::istream& is, std::span<const ParamRef> params) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw InputError("checkpoint: bad magic");
  const auto version = le::read<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw InputError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = le::read<std::uint32_t>(is);

  std::map<std::string, ParamTensor*> by_name;
  for (const auto& p : params) by_name[p.name] = p.param;
  if (count != by_name.size())
    throw InputError("checkpoint: holds " + std::to_string(count) + " tensors, model expects " +
                     std::to_string(by_name.size()));

  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = le::read_string(is);
    const auto rank = le::read<std::uint32_t>(is);
    if (rank > 8) throw InputError("checkpoint: bad rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(le::read<std::uint64_t>(is));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw InputError("checkpoint: unexpected tensor " + name);
    if (it->second->value.shape() != shape)
      throw InputError("checkpoint: shape mismatch for " + name + ": file " + shape_str(shape) +
                       ", model " + shape_str(it->second->value.shape()));
    le::read_doubles(is, it->second->value.data());
  }
}

inline void load_checkpoint(const std::string& path, std::span<const ParamRef> params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("checkpoint: cannot open " + path);
  load_checkpoint(is, params);
}

}  // namespace uagdet
