#pragma once

// Little-endian binary helpers shared by every on-disk format.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "voxcast/error.hpp"

namespace voxcast::binio {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

template <typename T>
  requires std::is_arithmetic_v<T>
void put(std::ostream& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
void put_span(std::ostream& out, std::span<const T> values) {
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

inline void put_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), static_cast<std::streamsize>(magic.size())); }

inline void put_string(std::ostream& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void check_stream(std::istream& in, std::string_view what) {
  if (!in) fail(ErrorKind::FormatError, "truncated input while reading " + std::string(what));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T get(std::istream& in) {
  char buf[sizeof(T)];
  in.read(buf, sizeof(T));
  check_stream(in, "scalar");
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

template <typename T>
  requires std::is_arithmetic_v<T>
void get_span(std::istream& in, std::span<T> values) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  check_stream(in, "array");
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  std::string buf(magic.size(), '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!in || buf != magic) fail(ErrorKind::FormatError, "bad magic, expected " + std::string(magic));
}

inline std::string get_string(std::istream& in, std::uint32_t max_len = 1u << 20) {
  const auto n = get<std::uint32_t>(in);
  if (n > max_len) fail(ErrorKind::FormatError, "string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), n);
  check_stream(in, "string");
  return s;
}

}  // namespace voxcast::binio
