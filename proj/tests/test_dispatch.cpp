// SPDX-License-Identifier: Apache-2.0
//
// Capacity-constrained dispatch: full-plan agreement with an independent
// greedy simulation, conservation and capacity invariants under fuzzing,
// monotonicity in the capacity, and the load-balance penalty formula.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sira/dispatch.hpp"
#include "sira/gating.hpp"
#include "sira/matrix.hpp"
#include "sira/rng.hpp"

namespace {

using namespace sira;

// Builds a decision directly from a score table; selection via the library's
// own clamping top-k (the oracle below re-derives everything from scores).
GateDecision decision_from_scores(const std::vector<std::vector<double>>& scores,
                                  std::size_t E, std::size_t K) {
  const std::size_t S = scores.size();
  GateDecision d;
  d.probs_pre_dropout = Matrix(E, S);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t e = 0; e < E; ++e) d.probs_pre_dropout.at(e, s) = scores[s][e];
  d.probs_post_dropout = d.probs_pre_dropout;
  d.dropout_mask = Matrix(E, S, 1.0);
  d.gate_values = Matrix(E, S, 0.0);
  d.top_k = std::min(K, E);
  for (std::size_t s = 0; s < S; ++s) {
    d.selected.push_back(top_k_indices(scores[s], K));
    for (std::size_t e : d.selected.back())
      d.gate_values.at(e, s) = scores[s][e];
  }
  return d;
}

struct OraclePlan {
  std::vector<std::vector<std::pair<std::size_t, double>>> per_expert;  // (token, gate)
  std::vector<std::pair<std::size_t, std::size_t>> dropped;
  std::vector<std::size_t> counts;
};

// Independent greedy simulation working from the raw score table alone:
// tokens in index order; per token the K best experts by (score desc, index
// asc); accept while the expert holds fewer than C tokens.
OraclePlan oracle_dispatch(const std::vector<std::vector<double>>& scores,
                           std::size_t E, std::size_t K, std::size_t C) {
  OraclePlan plan;
  plan.per_expert.resize(E);
  plan.counts.assign(E, 0);
  for (std::size_t s = 0; s < scores.size(); ++s) {
    std::vector<std::size_t> order;
    for (std::size_t e = 0; e < E; ++e) order.push_back(e);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[s][a] > scores[s][b];
    });
    order.resize(std::min(K, E));
    for (std::size_t e : order) {
      ++plan.counts[e];
      if (plan.per_expert[e].size() < C) plan.per_expert[e].push_back({s, scores[s][e]});
      else plan.dropped.push_back({s, e});
    }
  }
  return plan;
}

bool plans_agree(const DispatchPlan& got, const OraclePlan& want) {
  if (got.routed_counts != want.counts) return false;
  if (got.dropped_pairs != want.dropped) return false;
  if (got.per_expert_tokens.size() != want.per_expert.size()) return false;
  for (std::size_t e = 0; e < want.per_expert.size(); ++e) {
    if (got.per_expert_tokens[e].size() != want.per_expert[e].size()) return false;
    for (std::size_t i = 0; i < want.per_expert[e].size(); ++i) {
      if (got.per_expert_tokens[e][i].token != want.per_expert[e][i].first) return false;
      if (got.per_expert_tokens[e][i].gate != want.per_expert[e][i].second) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("a hand-frozen congestion case") {
  // 3 tokens all want experts 0 and 1; capacity 1 keeps only token 0.
  std::vector<std::vector<double>> scores{{0.6, 0.4}, {0.7, 0.3}, {0.5, 0.5}};
  GateDecision d = decision_from_scores(scores, 2, 2);
  DispatchPlan p = build_plan(d, 1);
  REQUIRE(p.per_expert_tokens.size() == 2);
  REQUIRE(p.per_expert_tokens[0].size() == 1);
  REQUIRE(p.per_expert_tokens[1].size() == 1);
  CHECK(p.per_expert_tokens[0][0].token == 0);
  CHECK(p.per_expert_tokens[1][0].token == 0);
  CHECK(p.dropped_pairs == std::vector<std::pair<std::size_t, std::size_t>>{
                               {1, 0}, {1, 1}, {2, 0}, {2, 1}});
  CHECK(p.routed_counts == std::vector<std::size_t>{3, 3});
  CHECK(plan_drop_rate(p) == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("build_plan matches the independent greedy simulation") {
  RngState rng{17, 0};
  for (int it = 0; it < 500; ++it) {
    const std::size_t E = 1 + rng.next_below(5);
    const std::size_t S = 1 + rng.next_below(8);
    const std::size_t K = 1 + rng.next_below(E + 2);  // may exceed E
    const std::size_t C = 1 + rng.next_below(4);
    std::vector<std::vector<double>> scores(S, std::vector<double>(E));
    for (auto& row : scores)
      for (auto& v : row) v = rng.next_uniform();
    if (it % 5 == 0 && E > 1)
      for (auto& row : scores) row[0] = row[E - 1];  // inject ties
    GateDecision d = decision_from_scores(scores, E, K);
    DispatchPlan got = build_plan(d, C);
    OraclePlan want = oracle_dispatch(scores, E, K, C);
    CHECK(plans_agree(got, want));
  }
}

TEST_CASE("accepted work grows with capacity and drops vanish at C >= S") {
  RngState rng{18, 0};
  for (int it = 0; it < 50; ++it) {
    const std::size_t E = 2 + rng.next_below(4);
    const std::size_t S = 2 + rng.next_below(7);
    const std::size_t K = 1 + rng.next_below(E);
    std::vector<std::vector<double>> scores(S, std::vector<double>(E));
    for (auto& row : scores)
      for (auto& v : row) v = rng.next_uniform();
    GateDecision d = decision_from_scores(scores, E, K);
    std::size_t prev_accepted = 0;
    for (std::size_t C = 1; C <= S; ++C) {
      DispatchPlan p = build_plan(d, C);
      std::size_t accepted = 0;
      for (const auto& lst : p.per_expert_tokens) accepted += lst.size();
      CHECK(accepted >= prev_accepted);
      prev_accepted = accepted;
      if (C >= S) CHECK(p.dropped_pairs.empty());
    }
  }
}

TEST_CASE("capacity below one is rejected") {
  GateDecision d = decision_from_scores({{0.5, 0.5}}, 2, 1);
  CHECK_THROWS_AS(build_plan(d, 0), std::invalid_argument);
}

TEST_CASE("aux_loss recomputes the penalty formula and ignores capacity") {
  RngState rng{19, 0};
  for (int it = 0; it < 40; ++it) {
    const std::size_t E = 1 + rng.next_below(6);
    const std::size_t S = 1 + rng.next_below(8);
    const std::size_t K = 1 + rng.next_below(E);
    std::vector<std::vector<double>> scores(S, std::vector<double>(E));
    for (auto& row : scores)
      for (auto& v : row) v = rng.next_uniform();
    GateDecision d = decision_from_scores(scores, E, K);
    std::vector<double> m = mean_gate_per_expert(d);

    DispatchPlan tight = build_plan(d, 1);
    DispatchPlan loose = build_plan(d, S + 5);
    double want = 0.0;
    for (std::size_t e = 0; e < E; ++e)
      want += (static_cast<double>(tight.routed_counts[e]) / static_cast<double>(S)) * m[e];
    want /= static_cast<double>(E);
    CHECK(aux_loss(tight, m) == doctest::Approx(want).epsilon(1e-12));
    // Demand counts are pre-capacity, so the penalty is capacity-blind.
    CHECK(aux_loss(loose, m) == aux_loss(tight, m));
  }
}
