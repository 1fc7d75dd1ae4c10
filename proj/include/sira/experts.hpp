// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "sira/matrix.hpp"
#include "sira/rng.hpp"

namespace sira {

/// Base projection of the host model. Never touched by the optimizer; a
/// checksum over `w0` must be stable across training.
struct FrozenProjection {
  Matrix w0;  // d_out x d_in
};

/// One low-rank adapter. The effective weight delta is up * down * scale,
/// so its rank is at most r. `up` starts at zero, which makes a fresh
/// adapter an exact no-op.
struct LoraExpert {
  Matrix down;   // r x d_in
  Matrix up;     // d_out x r
  double scale = 1.0;
};

/// Ordered bank of experts sharing (d_in, d_out, r).
struct ExpertBank {
  std::vector<LoraExpert> experts;

  std::size_t size() const { return experts.size(); }
};

struct ExpertGrads {
  Matrix down;   // same shape as expert.down
  Matrix up;     // same shape as expert.up
  Matrix input;  // same shape as x
};

/// down ~ Gaussian(0, init_std^2), up = 0. Throws on zero dimensions.
LoraExpert init_expert(std::size_t d_in, std::size_t d_out, std::size_t r,
                       RngState& rng, double init_std, double scale = 1.0);

/// Bank of `count` experts; expert e draws from rng.split(e) so the weights
/// of expert e do not depend on how many experts sit before it.
ExpertBank init_bank(std::size_t count, std::size_t d_in, std::size_t d_out,
                     std::size_t r, const RngState& rng, double init_std,
                     double scale = 1.0);

/// scale * up * (down * x). Accepts one column or S columns.
Matrix expert_forward(const LoraExpert& e, const Matrix& x);

/// Plain w0 * x.
Matrix frozen_forward(const FrozenProjection& p, const Matrix& x);

/// Gradients of sum(upstream .* expert_forward(e, x)) with respect to the
/// expert factors and the input.
ExpertGrads expert_backward(const LoraExpert& e, const Matrix& x, const Matrix& upstream);

}  // namespace sira
