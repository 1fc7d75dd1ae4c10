// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sira/config.hpp"
#include "sira/harness.hpp"

namespace sira {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Digest of a fixed inference forward pass: one deterministic probe
/// sequence pushed through the current parameters. Two checkpoints with the
/// same probe digest produce the same outputs.
std::uint64_t probe_digest(const ExperimentConfig& cfg, const ToyModel& model);

/// Raw image of a checkpoint file. Payload doubles are little-endian IEEE
/// bit patterns and every tensor carries its own checksum, so a snapshot
/// re-serializes to byte-identical files.
struct Snapshot {
  std::string config_echo;
  std::uint64_t config_digest = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_position = 0;
  std::uint64_t step = 0;
  double best_val = 0.0;
  std::uint64_t best_step = 0;
  std::uint64_t frozen = 0;
  std::uint64_t probe = 0;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

/// Throws CheckpointError on bad magic, unsupported version, truncation, or
/// a tensor whose payload checksum disagrees (the error names the tensor).
Snapshot read_snapshot(const std::string& path);
void write_snapshot(const std::string& path, const Snapshot& s);

/// Trainable tensors plus optimizer moments plus the training-stream RNG.
void save_checkpoint(const std::string& path, const ExperimentConfig& cfg,
                     const ToyModel& model, const TrainState& state);

/// Restores parameters and training state into a freshly initialized model.
/// Fails loudly when `cfg` digests differently from the stored config, when
/// the frozen weights disagree, or when the recomputed probe diverges.
TrainState load_checkpoint(const std::string& path, const ExperimentConfig& cfg,
                           ToyModel& model);

struct RoundtripReport {
  bool ok = false;
  std::string detail;  // "exact match" or the first divergence found
  std::uint64_t stored_probe = 0;
  std::uint64_t recomputed_probe = 0;
};

/// Self-contained verification: rebuild the model from the embedded config,
/// recompute the probe forward pass, and re-serialize to compare bytes.
RoundtripReport verify_checkpoint(const std::string& path);

}  // namespace sira
