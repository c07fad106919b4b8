// Little-endian primitives and FNV-1a hashing shared by the pack and
// checkpoint formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace onoalign {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t hash = kFnvOffset) {
  for (std::byte b : bytes) {
    hash ^= static_cast<std::uint64_t>(b);
    hash *= kFnvPrime;
  }
  return hash;
}

inline std::uint64_t fnv1a64(std::string_view text, std::uint64_t hash = kFnvOffset) {
  return fnv1a64(std::as_bytes(std::span(text.data(), text.size())), hash);
}

namespace detail {

template <typename T>
T byteswap_if_big(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
    std::memcpy(&value, raw, sizeof(T));
  }
  return value;
}

}  // namespace detail

// Appends the little-endian encoding of value to buffer.
template <typename T, typename Buffer>
void append_le(Buffer& buffer, T value) {
  value = detail::byteswap_if_big(value);
  const auto* raw = reinterpret_cast<const std::byte*>(&value);
  buffer.insert(buffer.end(), raw, raw + sizeof(T));
}

template <typename T>
T read_le(std::span<const std::byte> bytes, std::size_t offset) {
  if (offset + sizeof(T) > bytes.size()) throw FormatError("read past end of buffer");
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return detail::byteswap_if_big(value);
}

inline std::string to_hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

inline std::uint64_t from_hex64(const std::string& text) {
  if (text.size() != 16) throw FormatError("expected 16 hex digits, got '" + text + "'");
  std::uint64_t value = 0;
  for (char c : text) {
    value <<= 4;
    if (c >= '0' && c <= '9') value |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') value |= static_cast<std::uint64_t>(c - 'a' + 10);
    else if (c >= 'A' && c <= 'F') value |= static_cast<std::uint64_t>(c - 'A' + 10);
    else throw FormatError("bad hex digit in '" + text + "'");
  }
  return value;
}

}  // namespace onoalign
