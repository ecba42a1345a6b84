// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string_view>

namespace gencil {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// FNV-1a 64-bit over raw bytes. Pass a previous result as `seed` to chain.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                             std::uint64_t seed = kFnvOffset) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view text,
                             std::uint64_t seed = kFnvOffset) {
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}, seed);
}

/// Hashes the bit patterns of doubles (little-endian byte order).
inline std::uint64_t fnv1a64_doubles(std::span<const double> values,
                                     std::uint64_t seed = kFnvOffset) {
  std::uint64_t h = seed;
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= static_cast<std::uint8_t>(bits >> (8 * i));
      h *= kFnvPrime;
    }
  }
  return h;
}

}  // namespace gencil
