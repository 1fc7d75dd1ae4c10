// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sira/matrix.hpp"
#include "sira/rng.hpp"

namespace sira {

/// Numerically stable softmax of a single column vector (max-subtraction).
Matrix softmax_column(const Matrix& v);

/// Stable softmax applied independently to every column.
Matrix softmax_columns(const Matrix& m);

/// Jacobian-vector product of column-wise softmax: given probabilities p and
/// an upstream gradient on them, returns the gradient on the logits.
Matrix softmax_backward_columns(const Matrix& probs, const Matrix& upstream);

struct DropoutResult {
  Matrix value;
  /// Per-entry multiplier actually applied: 1/(1-rate) for kept entries,
  /// 0 for dropped ones, all ones at inference. Backward replays as
  /// upstream * mask.
  Matrix mask;
};

/// Inverted dropout. Draws one uniform per entry in row-major order when
/// training with rate > 0; consumes no randomness otherwise.
DropoutResult dropout(const Matrix& v, double rate, RngState& rng, bool training);

}  // namespace sira
