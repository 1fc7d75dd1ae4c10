// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "sira/toy_model.hpp"

namespace sira {

/// Everything a run depends on, in one flat key space. Defaults here are the
/// reference configuration; any JSON config file or --override only needs to
/// state what differs.
struct ExperimentConfig {
  ModelConfig model;

  std::size_t seq_len = 16;
  std::size_t num_tasks = 4;
  std::size_t task_rank = 4;       // rank of each task's linear map
  double task_map_scale = 0.2;
  double context_strength = 1.0;   // weight of the shared task direction in a token
  double task_noise = 0.3;         // per-token Gaussian noise scale
  std::size_t batch_size = 8;
  double lr = 5e-4;
  std::size_t steps = 2000;
  std::size_t eval_every = 100;
  std::size_t eval_sequences = 64;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/out";
};

/// Strict parse: unknown keys are errors naming the key, "mode" is required,
/// every other field falls back to its default.
ExperimentConfig config_from_json_text(const std::string& text);

/// Canonical full echo: every field, keys sorted, compact. Two configs are
/// interchangeable iff their echoes are byte-identical.
std::string config_to_json_text(const ExperimentConfig& cfg);

ExperimentConfig load_config_file(const std::string& path);

/// KEY=VALUE with VALUE parsed as JSON when possible, else as a string.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

void validate_config(const ExperimentConfig& cfg);

/// Digest over the canonical echo minus `steps` and `out_dir`, the two
/// fields a resumed run may legitimately change.
std::uint64_t config_digest(const ExperimentConfig& cfg);

}  // namespace sira
