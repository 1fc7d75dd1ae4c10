// SPDX-License-Identifier: Apache-2.0
#include "sira/dispatch.hpp"

#include <algorithm>
#include <stdexcept>

namespace sira {

DispatchPlan build_plan(const GateDecision& d, std::size_t capacity) {
  if (capacity < 1) throw std::invalid_argument("build_plan: capacity must be >= 1");
  const std::size_t num_experts = d.gate_values.rows;
  const std::size_t tokens = d.gate_values.cols;
  if (d.selected.size() != tokens)
    throw ShapeError("build_plan: decision has " + std::to_string(d.selected.size()) +
                     " selection lists for " + std::to_string(tokens) + " tokens");

  DispatchPlan plan;
  plan.per_expert_tokens.resize(num_experts);
  plan.routed_counts.assign(num_experts, 0);
  plan.group_size = tokens;
  plan.capacity = capacity;

  std::vector<std::size_t> order;
  for (std::size_t s = 0; s < tokens; ++s) {
    // Re-derive the visit order from the gate values rather than trusting
    // the stored selection order: descending value, ties to lowest index.
    order = d.selected[s];
    std::sort(order.begin(), order.end());
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return d.gate_values.at(a, s) > d.gate_values.at(b, s);
    });
    for (std::size_t e : order) {
      if (e >= num_experts)
        throw std::out_of_range("build_plan: selected expert index out of range");
      ++plan.routed_counts[e];
      if (plan.per_expert_tokens[e].size() < capacity)
        plan.per_expert_tokens[e].push_back({s, d.gate_values.at(e, s)});
      else
        plan.dropped_pairs.emplace_back(s, e);
    }
  }
  return plan;
}

double aux_loss(const DispatchPlan& plan, const std::vector<double>& m) {
  const std::size_t num_experts = plan.per_expert_tokens.size();
  if (m.size() != num_experts)
    throw std::invalid_argument("aux_loss: mean-gate vector length does not match expert count");
  if (plan.group_size < 1) throw std::invalid_argument("aux_loss: empty dispatch group");
  double total = 0.0;
  for (std::size_t e = 0; e < num_experts; ++e)
    total += (static_cast<double>(plan.routed_counts[e]) /
              static_cast<double>(plan.group_size)) * m[e];
  return total / static_cast<double>(num_experts);
}

double plan_drop_rate(const DispatchPlan& plan) {
  std::size_t accepted = 0;
  for (const auto& list : plan.per_expert_tokens) accepted += list.size();
  const std::size_t total = accepted + plan.dropped_pairs.size();
  if (total == 0) return 0.0;
  return static_cast<double>(plan.dropped_pairs.size()) / static_cast<double>(total);
}

}  // namespace sira
