// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sira/dispatch.hpp"
#include "sira/experts.hpp"
#include "sira/gating.hpp"
#include "sira/matrix.hpp"
#include "sira/rng.hpp"

namespace sira {

/// Layer behavior. `sira` is the full routed mixture; the others realize
/// the baselines it is compared against: one dense adapter, a soft mixture
/// over all experts, one random expert per step (averaged at inference),
/// and hash-based routing with no learned gate.
enum class LayerMode { sira, dense_lora, full_moe, random_expert, static_routing };

/// How the harness groups tokens for dispatch: capacity per sequence or per
/// whole batch. The layer itself just processes whatever group it is given.
enum class DispatchGroup { sequence, batch };

std::string mode_to_string(LayerMode m);
LayerMode mode_from_string(const std::string& s);
std::string group_to_string(DispatchGroup g);
DispatchGroup group_from_string(const std::string& s);

struct SiraConfig {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::size_t rank = 4;
  std::size_t num_experts = 16;
  std::size_t top_k = 4;
  std::size_t capacity = 4;
  double expert_dropout_rate = 0.5;
  double aux_weight = 0.01;
  LayerMode mode = LayerMode::sira;
  bool capacity_at_inference = true;
  DispatchGroup group = DispatchGroup::sequence;
  double init_std = 0.02;
  double expert_scale = 1.0;
};

/// Throws std::invalid_argument naming the offending field.
void validate_layer_config(const SiraConfig& cfg);

/// dense_lora keeps a bank of one regardless of num_experts.
std::size_t effective_experts(const SiraConfig& cfg);

/// Whether the mode routes through a learned gate network.
bool mode_has_gate(LayerMode m);

struct SiraLayerParams {
  FrozenProjection frozen;
  ExpertBank bank;
  GateNetwork gate;  // weight is 0x0 for modes without a learned gate
};

/// Builds the trainable state around an existing frozen projection. Expert e
/// and the gate draw from fixed splits of `rng`, so identical seeds give
/// identical expert weights across modes with different parameter sets.
SiraLayerParams init_sira_layer(const SiraConfig& cfg, Matrix frozen_w0,
                                const RngState& rng);

struct LayerOutput {
  Matrix y;       // d_out x S
  double aux = 0.0;  // aux_weight * load-balancing loss (0 outside sira mode)
  GateDecision decision;
  DispatchPlan plan;
};

/// Everything backward needs to replay the forward exactly: the input, the
/// routing artifacts, and each accepted routing with its expert output.
struct LayerCache {
  Matrix x;
  GateDecision decision;
  DispatchPlan plan;
  struct Accepted {
    std::size_t expert;
    std::size_t token;
    double gate;
    Matrix expert_out;  // d_out x 1, before gate weighting
  };
  std::vector<Accepted> accepted;
  std::size_t random_choice = 0;  // expert picked in random_expert training
  bool training = false;
};

/// Runs the configured mode. `rng` is consumed only for expert dropout
/// (sira, training) and the random expert pick (random_expert, training).
/// Pass `cache` to capture the invocation record for layer_backward.
LayerOutput layer_forward(const SiraConfig& cfg, const SiraLayerParams& params,
                          const Matrix& x, RngState& rng, bool training,
                          LayerCache* cache = nullptr);

struct LayerGrads {
  Matrix gate_weight;               // 0x0 for modes without a learned gate
  std::vector<Matrix> expert_down;  // one per expert in the bank
  std::vector<Matrix> expert_up;
  Matrix input;                     // d_in x S
};

/// Exact gradients with the cached masks, selections and plan held fixed.
/// `upstream` is dLoss/dy; `aux_scale` is dLoss/d(aux output), typically the
/// 1/groups factor of an averaged penalty, or 0 to cut the aux pathway.
LayerGrads layer_backward(const SiraConfig& cfg, const SiraLayerParams& params,
                          const LayerCache& cache, const Matrix& upstream,
                          double aux_scale);

/// Closed-form count of optimizer-visible parameters for one layer.
std::size_t count_trainable_params(const SiraConfig& cfg);

}  // namespace sira
