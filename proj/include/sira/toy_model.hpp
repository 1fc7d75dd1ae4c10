// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "sira/sira_layer.hpp"

namespace sira {

/// Host model hyperparameters. The adapter config is shared by all four
/// attention projections; d_in/d_out are forced to d_model at init.
struct ModelConfig {
  std::size_t d_model = 32;
  double attention_sharpness = 4.0;  // frozen query/key projections are this times identity
  double value_path_scale = 0.15;    // frozen value projection is this times identity
  double train_dropout = 0.05;       // on the attention output, training only
  SiraConfig layer;
};

/// One frozen single-head self-attention block whose four projections each
/// carry an independent adapter layer, between a frozen embedding and a
/// frozen head. Only the adapters train.
struct ToyModel {
  ModelConfig cfg;
  Matrix embed;  // d_model x d_model, frozen
  Matrix head;   // d_model x d_model, frozen
  std::array<SiraLayerParams, 4> layers;  // query, key, value, output
};

extern const std::array<const char*, 4> kLayerNames;  // "q", "k", "v", "o"

ToyModel init_toy_model(const ModelConfig& cfg, const RngState& rng);

/// Stable digest over every non-trainable tensor; must not move during
/// training.
std::uint64_t frozen_checksum(const ToyModel& m);

/// Diagnostics of one forward pass over a batch of sequences.
struct BatchResult {
  Matrix out;        // d_model x (batch * seq_len)
  double mse = 0.0;  // 0 when no targets were given
  double aux = 0.0;  // sum over layers of the group-averaged aux terms
  double loss = 0.0; // mse + aux
  std::array<double, 4> entropy{};          // per layer, mean over groups
  std::array<std::size_t, 4> accepted{};    // accepted routings per layer
  std::array<std::size_t, 4> dropped{};     // capacity-dropped routings per layer
  std::array<std::vector<std::size_t>, 4> accepted_per_expert;
  // Per layer: E x batch matrix of example-mean pre-dropout gate
  // probabilities, the unit the task-gate correlation is computed over.
  std::array<Matrix, 4> example_gate_means;
};

/// Replay record for model_backward.
struct ModelCache {
  Matrix x_embed;  // d x N
  std::array<std::vector<LayerCache>, 4> layer;  // per dispatch group
  std::vector<Matrix> attn;                      // per sequence, S x S
  Matrix q_out, k_out, v_out;                    // d x N
  Matrix ctx;            // attention output before dropout, d x N
  Matrix drop_mask;      // multiplier applied to ctx
  Matrix o_out;          // d x N
  Matrix out;            // tanh(head * o_out)
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  bool training = false;
};

/// Forward over `batch` sequences laid out as consecutive column blocks of
/// length seq_len. Targets may be empty (prediction only). Adapter dispatch
/// runs per sequence or over the whole batch according to cfg.layer.group.
BatchResult model_forward(const ToyModel& m, const Matrix& inputs, const Matrix& targets,
                          std::size_t seq_len, RngState& rng, bool training,
                          ModelCache* cache = nullptr);

/// The same computation with every adapter ignored: embedding, frozen
/// projections, attention, frozen head. Reference for the fresh-init
/// identity property.
Matrix model_frozen_forward(const ToyModel& m, const Matrix& inputs, std::size_t seq_len);

struct ModelGrads {
  std::array<LayerGrads, 4> layer;
};

/// Gradients of mse + sum_layers mean_groups(aux) for the cached forward.
ModelGrads model_backward(const ToyModel& m, const ModelCache& cache, const Matrix& targets);

}  // namespace sira
