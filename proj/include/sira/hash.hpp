// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "sira/matrix.hpp"

namespace sira {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

/// FNV-1a over raw bytes.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

/// Feeds the value in little-endian byte order, so digests are identical
/// across hosts.
inline std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
  for (int i = 0; i < 8; ++i) {
    h ^= static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64_str(const std::string& s, std::uint64_t h = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), h);
}

/// Shape plus payload, doubles fed by their IEEE bit patterns little-endian.
inline std::uint64_t hash_matrix(const Matrix& m, std::uint64_t h = kFnvOffset) {
  h = fnv1a64_u64(m.rows, h);
  h = fnv1a64_u64(m.cols, h);
  for (double d : m.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    h = fnv1a64_u64(bits, h);
  }
  return h;
}

}  // namespace sira
