// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "sira/gating.hpp"

namespace sira {

/// One accepted (token, expert) routing together with its gate value.
struct Routing {
  std::size_t token = 0;
  double gate = 0.0;
};

/// Capacity-constrained assignment for one dispatch group of S tokens.
/// Every routed pair lands either in per_expert_tokens or in dropped_pairs.
struct DispatchPlan {
  std::vector<std::vector<Routing>> per_expert_tokens;      // length E, each <= capacity
  std::vector<std::pair<std::size_t, std::size_t>> dropped_pairs;  // (token, expert)
  std::vector<std::size_t> routed_counts;  // c_e: pre-capacity demand per expert
  std::size_t group_size = 0;              // S
  std::size_t capacity = 0;
};

/// Greedy deterministic assignment: tokens in increasing index; within a
/// token its selected experts in decreasing gate value (ties to the lowest
/// expert index); a routing is accepted iff the expert still has room.
/// capacity < 1 is an error.
DispatchPlan build_plan(const GateDecision& d, std::size_t capacity);

/// Load-balancing penalty (1/E) * sum_e (c_e / S) * m_e. The demand counts
/// c_e are constants; only m carries gradient.
double aux_loss(const DispatchPlan& plan, const std::vector<double>& m);

/// Share of routed pairs rejected for capacity; 0 when nothing was routed.
double plan_drop_rate(const DispatchPlan& plan);

}  // namespace sira
