// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "sira/matrix.hpp"
#include "sira/ops.hpp"
#include "sira/rng.hpp"

namespace sira {

/// Linear scorer mapping a token activation to one logit per expert.
struct GateNetwork {
  Matrix weight;  // d_in x E
};

/// Everything the routing step decided for a group of S tokens. Columns are
/// tokens throughout; rows are experts.
struct GateDecision {
  Matrix probs_pre_dropout;   // E x S, each column sums to 1
  Matrix probs_post_dropout;  // E x S, not renormalized after dropout
  Matrix dropout_mask;        // E x S multiplier actually applied
  std::vector<std::vector<std::size_t>> selected;  // per token, min(k, E) indices
  Matrix gate_values;         // E x S, probs_post_dropout masked to `selected`
  std::size_t top_k = 0;      // effective k after clamping to E
};

struct GateGrads {
  Matrix weight;  // d_in x E
  Matrix input;   // d_in x S
};

GateNetwork init_gate(std::size_t d_in, std::size_t num_experts, RngState& rng,
                      double init_std);

/// Indices of the k largest entries, in decreasing-value order; equal values
/// resolve to the lowest index. k is clamped to v.size().
std::vector<std::size_t> top_k_indices(const std::vector<double>& v, std::size_t k);

/// Per token: softmax over expert logits, inverted dropout on the
/// probabilities when training, then keep the top-k post-dropout scores as
/// gate values (no renormalization). k > E clamps to E with a warning on
/// stderr; k < 1 and non-finite logits are errors.
GateDecision gate_forward(const GateNetwork& g, const Matrix& x, std::size_t k,
                          double rate, RngState& rng, bool training);

/// m_e = mean over tokens of the post-dropout probability of expert e.
std::vector<double> mean_gate_per_expert(const GateDecision& d);

/// Mean over tokens of -sum_e p ln p on the pre-dropout probabilities,
/// with 0 ln 0 taken as 0. Always in [0, ln E].
double gate_entropy(const GateDecision& d);

/// Chain rule through the forward decision with its masks and selections
/// held fixed. `upstream_gate_values` is dLoss/d(gate_values) and reaches
/// only selected entries; `upstream_probs_post` is dLoss/d(probs_post_dropout)
/// and reaches every entry (the load-balancing term uses it). Pass an empty
/// matrix to skip either term.
GateGrads gate_backward(const GateNetwork& g, const GateDecision& d, const Matrix& x,
                        const Matrix& upstream_gate_values,
                        const Matrix& upstream_probs_post);

}  // namespace sira
