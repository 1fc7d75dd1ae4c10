// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sira/config.hpp"
#include "sira/toy_model.hpp"

namespace sira {

/// Fixed derivation of the independent random streams of a run. Everything
/// a run draws comes from one of these, so (config, seed) pins the result.
inline RngState task_stream(std::uint64_t seed) { return RngState{seed, 0}.split(1); }
inline RngState model_stream(std::uint64_t seed) { return RngState{seed, 0}.split(2); }
inline RngState train_stream(std::uint64_t seed) { return RngState{seed, 0}.split(3); }
inline RngState eval_stream(std::uint64_t seed) { return RngState{seed, 0}.split(4); }

/// One regression task: tokens share a context direction, targets apply a
/// task-specific low-rank map followed by tanh.
struct SyntheticTask {
  std::size_t id = 0;
  Matrix context_dir;  // d x 1, unit norm
  Matrix map;          // d x d, rank <= task_rank
};

/// Throws if any two task maps agree on a probe set (indistinct tasks).
std::vector<SyntheticTask> make_tasks(const ExperimentConfig& cfg, const RngState& rng);

struct Batch {
  Matrix inputs;   // d x (batch * seq_len)
  Matrix targets;
  std::vector<std::size_t> task_ids;  // one per sequence
};

/// Sequences drawn uniformly over tasks; token = context + noise.
Batch generate_batch(const ExperimentConfig& cfg, const std::vector<SyntheticTask>& tasks,
                     std::size_t batch_size, RngState& rng);

struct Example {
  Matrix inputs;   // d x seq_len
  Matrix targets;
  std::size_t task = 0;
};

/// Fixed validation set: example i belongs to task i mod num_tasks.
std::vector<Example> make_eval_set(const ExperimentConfig& cfg,
                                   const std::vector<SyntheticTask>& tasks, RngState rng);

/// Mean |Pearson r| between task one-hots and per-example mean gate
/// probabilities, over all (task, gate) pairs with defined variance.
/// `gate_means` holds one E x n matrix per layer (n = examples). Pairs with
/// zero variance are excluded and counted; throws if every pair is excluded
/// or fewer than 2 examples / 2 distinct tasks are present.
double task_gate_correlation(const std::vector<std::size_t>& task_ids,
                             const std::vector<const Matrix*>& gate_means,
                             std::size_t num_tasks, std::size_t* excluded_out = nullptr);

struct EvalStats {
  double mse = 0.0;
  double aux = 0.0;
  std::array<double, 4> entropy{};  // per layer
  double drop_rate = 0.0;           // over all layers and examples
  std::array<std::vector<double>, 4> utilization;  // accepted share per expert
  double utilization_cv = 0.0;      // mean over layers with accepted routings
  std::optional<double> correlation;  // empty when undefined for the mode
  std::size_t correlation_excluded = 0;
};

/// Deterministic regardless of worker count: per-example results are reduced
/// in example order. SIRA_THREADS caps the number of workers.
EvalStats evaluate(const ExperimentConfig& cfg, const ToyModel& model,
                   const std::vector<Example>& eval_set);

struct NamedParam {
  std::string name;
  Matrix* tensor;
};

/// Optimizer-visible tensors in a fixed order: per layer the gate (when the
/// mode has one), then each expert's down and up factors.
std::vector<NamedParam> trainable_params(ToyModel& m);

/// Gradients aligned with trainable_params order.
std::vector<const Matrix*> align_grads(const ToyModel& m, const ModelGrads& g);

struct TrainState {
  std::size_t step = 0;
  RngState train_rng{0, 0};
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  std::vector<Matrix> adam_m;  // aligned with trainable_params
  std::vector<Matrix> adam_v;
};

TrainState init_train_state(const ExperimentConfig& cfg, ToyModel& model);

struct EvalRecord {
  std::size_t step = 0;
  std::optional<double> train_loss;  // mean total loss since the last eval
  EvalStats stats;
  bool is_best = false;
};

struct TrainHooks {
  std::function<void(const EvalRecord&)> on_eval;
  std::function<void(const ToyModel&, const TrainState&)> on_best;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t at_step, double loss_value)
      : std::runtime_error("training diverged at step " + std::to_string(at_step) +
                           ": loss is not finite"),
        step(at_step), loss(loss_value) {}
  std::size_t step;
  double loss;
};

/// Runs steps [state.step + 1, cfg.steps]; a fresh state also emits the
/// step-0 record. Evaluates every eval_every steps and at the final step;
/// throws TrainingDiverged on a non-finite loss.
TrainState train(const ExperimentConfig& cfg, ToyModel& model,
                 const std::vector<SyntheticTask>& tasks,
                 const std::vector<Example>& eval_set, TrainState state,
                 const TrainHooks& hooks);

}  // namespace sira
