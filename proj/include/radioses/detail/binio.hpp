#pragma once

// Little-endian binary stream helpers shared by the on-disk containers.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "radioses/common.hpp"

namespace radioses::detail {

inline void w_u32(std::ostream& f, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  f.write(b, 4);
}

inline void w_u64(std::ostream& f, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  f.write(b, 8);
}

inline void w_f32(std::ostream& f, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  w_u32(f, bits);
}

inline std::uint32_t r_u32(std::istream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  require(bool(f), "binary read: unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t r_u64(std::istream& f) {
  unsigned char b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  require(bool(f), "binary read: unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline float r_f32(std::istream& f) {
  std::uint32_t bits = r_u32(f);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void w_magic(std::ostream& f, const char magic[4]) {
  f.write(magic, 4);
}

inline void expect_magic(std::istream& f, const char magic[4],
                         const std::string& what) {
  char b[4];
  f.read(b, 4);
  require(bool(f) && std::memcmp(b, magic, 4) == 0,
          "binary read: bad magic, expected " + what);
}

/// Bulk write of float32 payloads (already little-endian on every target we
/// build for; asserted to keep the format honest on exotic hosts).
inline void w_f32_block(std::ostream& f, const float* data, std::size_t n) {
  static_assert(sizeof(float) == 4);
  f.write(reinterpret_cast<const char*>(data),
          std::streamsize(n * sizeof(float)));
}

inline void r_f32_block(std::istream& f, float* data, std::size_t n) {
  f.read(reinterpret_cast<char*>(data), std::streamsize(n * sizeof(float)));
  require(bool(f), "binary read: unexpected end of file");
}

}  // namespace radioses::detail
