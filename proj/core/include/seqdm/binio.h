#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "seqdm/errors.h"

// Little-endian fixed-width encoding for the binary file formats.
namespace seqdm::binio {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Readers throw ParseError naming `what` on truncation.
inline std::uint64_t get_le(std::istream& in, int bytes, const char* what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), bytes)) {
    throw ParseError(std::string("truncated file while reading ") + what);
  }
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
  return static_cast<std::uint32_t>(get_le(in, 4, what));
}

inline std::uint64_t get_u64(std::istream& in, const char* what) { return get_le(in, 8, what); }

inline double get_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(get_le(in, 8, what));
}

inline std::string get_string(std::istream& in, const char* what, std::uint64_t max_size) {
  const std::uint64_t n = get_u64(in, what);
  if (n > max_size) throw ParseError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw ParseError(std::string("truncated file while reading ") + what);
  }
  return s;
}

}  // namespace seqdm::binio
