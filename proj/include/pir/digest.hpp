#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace pir {

/// 64-bit FNV-1a (offset basis 0xcbf29ce484222325, prime 0x100000001b3).
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);

}  // namespace pir
