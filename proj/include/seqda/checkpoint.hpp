#pragma once

// Binary parameter checkpoint:
//   "SEQDACKP" | u32 version | u32 meta_len | meta (key = value text)
//   | u32 count | count x { u32 name_len | name | u32 rank | u64 dims[rank] | f64 values[] }
// All integers and doubles little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "seqda/config.hpp"
#include "seqda/model.hpp"

namespace seqda::checkpoint {

inline constexpr char kMagic[8] = {'S', 'E', 'Q', 'D', 'A', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

template <class T>
void put(std::ostream& out, T v) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(v);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

inline std::string get_string(std::istream& in, std::size_t limit) {
  const auto n = get<std::uint32_t>(in);
  if (n > limit) throw std::runtime_error("checkpoint: corrupt string length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace detail

struct Checkpoint {
  KeyValueConfig meta;  ///< model config, alphabet, provenance
  model::ParamStore params;
};

inline void write(std::ostream& out, const Checkpoint& ck) {
  out.write(kMagic, sizeof kMagic);
  detail::put<std::uint32_t>(out, kVersion);
  const std::string meta = ck.meta.to_text();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.params.size()));
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const std::string& name = ck.params.name(i);
    const Tensor& t = ck.params.at(i);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) detail::put<std::uint64_t>(out, d);
    for (double v : t.values) detail::put<double>(out, v);
  }
}

inline Checkpoint read(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.meta = KeyValueConfig::parse(detail::get_string(in, 1u << 24), "<checkpoint meta>");
  const auto count = detail::get<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = detail::get_string(in, 4096);
    const auto rank = detail::get<std::uint32_t>(in);
    if (rank > 8) throw std::runtime_error("checkpoint: corrupt rank for '" + name + "'");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::get<std::uint64_t>(in));
    Tensor t(shape);
    for (double& v : t.values) v = detail::get<double>(in);
    ck.params.add(std::move(name), std::move(t));
  }
  return ck;
}

inline void save(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  write(out, ck);
}

inline Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read(in);
}

}  // namespace seqda::checkpoint
