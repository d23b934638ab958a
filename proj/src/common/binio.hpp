#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "numcore/tensor.hpp"

namespace fge::binio {

// Checkpoint container: "FGE1" magic, u32 payload kind, then (name, rank,
// dims, f64 data) records until EOF. Everything little-endian.
inline constexpr char kMagic[4] = {'F', 'G', 'E', '1'};
inline constexpr std::uint32_t kKindEncoder = 1;
inline constexpr std::uint32_t kKindDetector = 2;

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  write_bytes(out, b, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  write_bytes(out, b, 8);
}

inline bool read_exact(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount()) == n;
}

inline std::uint32_t read_u32(std::istream& in, const std::string& ctx) {
  unsigned char b[4];
  if (!read_exact(in, b, 4))
    raise(ErrorCode::MalformedHeader, "truncated checkpoint: " + ctx);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& in, const std::string& ctx) {
  unsigned char b[8];
  if (!read_exact(in, b, 8))
    raise(ErrorCode::MalformedHeader, "truncated checkpoint: " + ctx);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_header(std::ostream& out, std::uint32_t kind) {
  write_bytes(out, kMagic, 4);
  write_u32(out, kind);
}

// Returns the payload kind; raises MalformedHeader on a foreign magic.
inline std::uint32_t read_header(std::istream& in, const std::string& path) {
  char m[4];
  if (!read_exact(in, m, 4) || m[0] != kMagic[0] || m[1] != kMagic[1] ||
      m[2] != kMagic[2] || m[3] != kMagic[3])
    raise(ErrorCode::MalformedHeader, "bad checkpoint magic in " + path);
  return read_u32(in, path + " kind");
}

inline void write_record(std::ostream& out, const std::string& name,
                         const Tensor& t) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  write_bytes(out, name.data(), name.size());
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) write_u64(out, d);
  // doubles are stored as their IEEE-754 bit pattern, little-endian
  for (double v : t.data) {
    std::uint64_t bits;
    static_assert(sizeof bits == sizeof v);
    __builtin_memcpy(&bits, &v, sizeof bits);
    write_u64(out, bits);
  }
}

// False on clean EOF before a record starts; raises mid-record.
inline bool read_record(std::istream& in, const std::string& path,
                        std::string& name, Tensor& t) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() == 0) return false;
  if (in.gcount() != 4)
    raise(ErrorCode::MalformedHeader, "truncated record header in " + path);
  std::uint32_t name_len = 0;
  for (int i = 0; i < 4; ++i)
    name_len |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  if (name_len == 0 || name_len > 4096)
    raise(ErrorCode::MalformedHeader, "implausible record name in " + path);
  name.resize(name_len);
  if (!read_exact(in, name.data(), name_len))
    raise(ErrorCode::MalformedHeader, "truncated record name in " + path);
  const std::uint32_t rank = read_u32(in, path + " rank");
  if (rank > 8)
    raise(ErrorCode::MalformedHeader, "implausible tensor rank in " + path);
  std::vector<std::size_t> shape(rank);
  std::size_t numel = 1;
  for (auto& d : shape) {
    d = static_cast<std::size_t>(read_u64(in, path + " dim"));
    if (d == 0 || d > (1ull << 32))
      raise(ErrorCode::MalformedHeader, "implausible dimension in " + path);
    numel *= d;
  }
  t = Tensor(std::move(shape));
  for (std::size_t i = 0; i < numel; ++i) {
    const std::uint64_t bits = read_u64(in, path + " payload");
    double v;
    __builtin_memcpy(&v, &bits, sizeof v);
    t.data[i] = v;
  }
  return true;
}

}  // namespace fge::binio
