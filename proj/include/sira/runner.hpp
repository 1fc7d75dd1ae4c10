// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sira/config.hpp"
#include "sira/harness.hpp"

namespace sira {

/// Shared command-line options already parsed by the CLI front end.
struct RunOptions {
  std::string config_path;             // empty = built-in defaults
  std::vector<std::string> overrides;  // KEY=VALUE, applied in order
  std::optional<std::uint64_t> seed;
  std::string out_dir;                 // overrides the config's out_dir when set
  std::string resume_path;             // train: checkpoint to continue from
};

/// Load + override + validate.
ExperimentConfig resolve_config(const RunOptions& opt);

/// End-to-end run in memory: build tasks, eval set and model, optionally
/// resume, then train. Emitted eval records are returned in order.
struct RunArtifacts {
  ExperimentConfig cfg;
  ToyModel model;
  TrainState state;
  std::vector<EvalRecord> records;
};
RunArtifacts execute_run(const ExperimentConfig& cfg, const std::string& resume_path,
                         const TrainHooks& hooks);

/// Writes metrics.jsonl (config echo first, then one record per eval),
/// best.sira / final.sira, and summary.csv under the output directory.
int run_train(const RunOptions& opt);

/// Restores a checkpoint and prints one evaluation record as JSON.
int run_eval(const RunOptions& opt, const std::string& checkpoint_path);

/// One training run per (value, seed) pair along a config axis; rows land
/// in ablation.csv. Empty `values` selects the default grid for the axis.
int run_ablate(const RunOptions& opt, const std::string& axis,
               std::vector<std::string> values, std::vector<std::uint64_t> seeds);

/// Fast self-contained property suite; prints one PASS/FAIL line per check.
int run_verify(const RunOptions& opt);

/// Checkpoint integrity: reload, recompute the probe pass, compare bytes.
int run_roundtrip(const std::string& checkpoint_path);

/// Default sweep grids, exposed for tests.
std::vector<std::string> default_ablation_values(const std::string& axis);

}  // namespace sira
