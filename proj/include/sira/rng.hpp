// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace sira {

/// Counter-based SplitMix64 stream. A draw at (seed, position) is a pure
/// function of both values, so identical states replay identical streams on
/// every platform. Copy the struct to fork a replayable snapshot; use
/// split() to derive an independent stream.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t position = 0;

  explicit RngState(std::uint64_t s = 0, std::uint64_t pos = 0) : seed(s), position(pos) {}

  std::uint64_t next_u64();
  /// Uniform double in [0, 1), 53 mantissa bits.
  double next_uniform();
  /// Standard normal via Box-Muller; consumes exactly two uniforms.
  double next_gaussian();
  /// Uniform integer in [0, bound); bound must be > 0.
  std::uint64_t next_below(std::uint64_t bound);

  /// Independent stream derived from (seed, tag); does not advance *this.
  RngState split(std::uint64_t tag) const;
};

/// SplitMix64 output function (bijective 64-bit mix).
std::uint64_t mix64(std::uint64_t z);

}  // namespace sira
