// SPDX-License-Identifier: Apache-2.0
#include "sira/gating.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace sira {

GateNetwork init_gate(std::size_t d_in, std::size_t num_experts, RngState& rng,
                      double init_std) {
  if (d_in == 0 || num_experts == 0)
    throw std::invalid_argument("init_gate: dimensions must be >= 1");
  GateNetwork g;
  g.weight = Matrix(d_in, num_experts);
  for (double& v : g.weight.data) v = init_std * rng.next_gaussian();
  return g;
}

std::vector<std::size_t> top_k_indices(const std::vector<double>& v, std::size_t k) {
  k = std::min(k, v.size());
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Stable sort keeps equal scores in index order, which is the tie rule.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  order.resize(k);
  return order;
}

GateDecision gate_forward(const GateNetwork& g, const Matrix& x, std::size_t k,
                          double rate, RngState& rng, bool training) {
  if (k < 1) throw std::invalid_argument("gate_forward: k must be >= 1");
  const std::size_t num_experts = g.weight.cols;
  if (x.rows != g.weight.rows)
    throw ShapeError("gate_forward: input rows " + shape_str(x) +
                     " do not match gate weight " + shape_str(g.weight));
  if (k > num_experts) {
    std::cerr << "gate_forward: k=" << k << " clamped to " << num_experts
              << " experts\n";
    k = num_experts;
  }

  const Matrix logits = matmul(transpose(g.weight), x);  // E x S
  if (!all_finite(logits))
    throw std::runtime_error("gate_forward: non-finite gate logits");

  GateDecision d;
  d.top_k = k;
  d.probs_pre_dropout = softmax_columns(logits);
  DropoutResult dr = dropout(d.probs_pre_dropout, rate, rng, training);
  d.probs_post_dropout = std::move(dr.value);
  d.dropout_mask = std::move(dr.mask);

  const std::size_t tokens = x.cols;
  d.gate_values = Matrix(num_experts, tokens);
  d.selected.resize(tokens);
  std::vector<double> column(num_experts);
  for (std::size_t s = 0; s < tokens; ++s) {
    for (std::size_t e = 0; e < num_experts; ++e) column[e] = d.probs_post_dropout.at(e, s);
    d.selected[s] = top_k_indices(column, k);
    for (std::size_t e : d.selected[s]) d.gate_values.at(e, s) = column[e];
  }
  return d;
}

std::vector<double> mean_gate_per_expert(const GateDecision& d) {
  const std::size_t num_experts = d.probs_post_dropout.rows;
  const std::size_t tokens = d.probs_post_dropout.cols;
  if (tokens == 0) throw std::invalid_argument("mean_gate_per_expert: no tokens");
  std::vector<double> m(num_experts, 0.0);
  for (std::size_t e = 0; e < num_experts; ++e) {
    for (std::size_t s = 0; s < tokens; ++s) m[e] += d.probs_post_dropout.at(e, s);
    m[e] /= static_cast<double>(tokens);
  }
  return m;
}

double gate_entropy(const GateDecision& d) {
  const std::size_t tokens = d.probs_pre_dropout.cols;
  if (tokens == 0) throw std::invalid_argument("gate_entropy: no tokens");
  double total = 0.0;
  for (std::size_t s = 0; s < tokens; ++s) {
    double h = 0.0;
    for (std::size_t e = 0; e < d.probs_pre_dropout.rows; ++e) {
      const double p = d.probs_pre_dropout.at(e, s);
      if (p > 0.0) h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(tokens);
}

GateGrads gate_backward(const GateNetwork& g, const GateDecision& d, const Matrix& x,
                        const Matrix& upstream_gate_values,
                        const Matrix& upstream_probs_post) {
  const Matrix& probs = d.probs_pre_dropout;
  if (d.dropout_mask.rows != probs.rows || d.dropout_mask.cols != probs.cols)
    throw ShapeError("gate_backward: decision mask does not match its probabilities");
  if (x.rows != g.weight.rows || x.cols != probs.cols)
    throw ShapeError("gate_backward: input " + shape_str(x) +
                     " does not match the forward decision");

  // Upstream on the post-dropout probabilities: the gate-value term reaches
  // only selected entries (fixed top-k selection), the probability term
  // reaches all of them.
  Matrix u_post(probs.rows, probs.cols);
  if (!upstream_gate_values.empty()) {
    if (!upstream_gate_values.same_shape(probs))
      throw ShapeError("gate_backward: upstream_gate_values shape " +
                       shape_str(upstream_gate_values) + " does not match " + shape_str(probs));
    for (std::size_t s = 0; s < probs.cols; ++s)
      for (std::size_t e : d.selected[s])
        u_post.at(e, s) = upstream_gate_values.at(e, s);
  }
  if (!upstream_probs_post.empty()) {
    if (!upstream_probs_post.same_shape(probs))
      throw ShapeError("gate_backward: upstream_probs_post shape " +
                       shape_str(upstream_probs_post) + " does not match " + shape_str(probs));
    u_post += upstream_probs_post;
  }

  const Matrix u_pre = hadamard(u_post, d.dropout_mask);
  const Matrix u_logits = softmax_backward_columns(probs, u_pre);

  GateGrads out;
  out.weight = matmul(x, transpose(u_logits));
  out.input = matmul(g.weight, u_logits);
  return out;
}

}  // namespace sira
