// SPDX-License-Identifier: Apache-2.0
#include "sira/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

namespace sira {

namespace {

Matrix tanh_map(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = std::tanh(m.data[i]);
  return out;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, RngState& rng, double std_dev) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = std_dev * rng.next_gaussian();
  return m;
}

// One task-pure sequence: every token is the task direction plus noise.
void fill_sequence(const ExperimentConfig& cfg, const SyntheticTask& task,
                   Matrix& inputs, Matrix& targets, std::size_t col0, RngState& rng) {
  const std::size_t d = cfg.model.d_model;
  Matrix block(d, cfg.seq_len);
  for (std::size_t s = 0; s < cfg.seq_len; ++s)
    for (std::size_t i = 0; i < d; ++i)
      block.at(i, s) = cfg.context_strength * task.context_dir.at(i, 0) +
                       cfg.task_noise * rng.next_gaussian();
  const Matrix target_block = tanh_map(matmul(task.map, block));
  for (std::size_t s = 0; s < cfg.seq_len; ++s)
    for (std::size_t i = 0; i < d; ++i) {
      inputs.at(i, col0 + s) = block.at(i, s);
      targets.at(i, col0 + s) = target_block.at(i, s);
    }
}

}  // namespace

std::vector<SyntheticTask> make_tasks(const ExperimentConfig& cfg, const RngState& rng) {
  const std::size_t d = cfg.model.d_model;
  std::vector<SyntheticTask> tasks;
  tasks.reserve(cfg.num_tasks);
  for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
    RngState tr = rng.split(t);
    SyntheticTask task;
    task.id = t;
    task.context_dir = gaussian_matrix(d, 1, tr, 1.0);
    double norm = 0.0;
    for (double v : task.context_dir.data) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::runtime_error("make_tasks: degenerate context direction");
    task.context_dir *= 1.0 / norm;
    const Matrix left = gaussian_matrix(d, cfg.task_rank, tr, 1.0);
    const Matrix right = gaussian_matrix(d, cfg.task_rank, tr, 1.0);
    task.map = matmul(left, transpose(right));
    task.map *= cfg.task_map_scale;
    tasks.push_back(std::move(task));
  }

  // Distinctness: any two maps must disagree on a probe set.
  RngState probe_rng = rng.split(0xD15717C7);
  const Matrix probe = gaussian_matrix(d, 4, probe_rng, 1.0);
  for (std::size_t a = 0; a < tasks.size(); ++a)
    for (std::size_t b = a + 1; b < tasks.size(); ++b) {
      const double gap =
          max_abs_diff(matmul(tasks[a].map, probe), matmul(tasks[b].map, probe));
      if (gap <= 1e-6)
        throw std::runtime_error("make_tasks: tasks " + std::to_string(a) + " and " +
                                 std::to_string(b) + " are not distinct");
    }
  return tasks;
}

Batch generate_batch(const ExperimentConfig& cfg, const std::vector<SyntheticTask>& tasks,
                     std::size_t batch_size, RngState& rng) {
  if (tasks.empty()) throw std::invalid_argument("generate_batch: task list is empty");
  if (batch_size < 1) throw std::invalid_argument("generate_batch: batch_size must be >= 1");
  const std::size_t d = cfg.model.d_model;
  Batch b;
  b.inputs = Matrix(d, batch_size * cfg.seq_len);
  b.targets = Matrix(d, batch_size * cfg.seq_len);
  b.task_ids.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t t = static_cast<std::size_t>(rng.next_below(tasks.size()));
    b.task_ids[i] = t;
    fill_sequence(cfg, tasks[t], b.inputs, b.targets, i * cfg.seq_len, rng);
  }
  return b;
}

std::vector<Example> make_eval_set(const ExperimentConfig& cfg,
                                   const std::vector<SyntheticTask>& tasks, RngState rng) {
  if (tasks.empty()) throw std::invalid_argument("make_eval_set: task list is empty");
  std::vector<Example> set(cfg.eval_sequences);
  const std::size_t d = cfg.model.d_model;
  for (std::size_t i = 0; i < set.size(); ++i) {
    Example& ex = set[i];
    ex.task = i % tasks.size();
    ex.inputs = Matrix(d, cfg.seq_len);
    ex.targets = Matrix(d, cfg.seq_len);
    fill_sequence(cfg, tasks[ex.task], ex.inputs, ex.targets, 0, rng);
  }
  return set;
}

namespace {

// Population Pearson correlation; empty when either side is constant.
std::optional<double> pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx < 1e-24 || syy < 1e-24) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

double task_gate_correlation(const std::vector<std::size_t>& task_ids,
                             const std::vector<const Matrix*>& gate_means,
                             std::size_t num_tasks, std::size_t* excluded_out) {
  const std::size_t n = task_ids.size();
  if (n < 2) throw std::invalid_argument("task_gate_correlation: need at least 2 examples");
  std::vector<bool> present(num_tasks, false);
  for (std::size_t t : task_ids) {
    if (t >= num_tasks) throw std::out_of_range("task_gate_correlation: task id out of range");
    present[t] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2)
    throw std::invalid_argument("task_gate_correlation: need at least 2 distinct tasks");

  std::size_t excluded = 0, counted = 0;
  double sum = 0.0;
  std::vector<double> onehot(n), gate(n);
  for (std::size_t t = 0; t < num_tasks; ++t) {
    for (std::size_t i = 0; i < n; ++i) onehot[i] = task_ids[i] == t ? 1.0 : 0.0;
    for (const Matrix* gm : gate_means) {
      if (gm->cols != n)
        throw ShapeError("task_gate_correlation: gate means " + shape_str(*gm) +
                         " do not cover " + std::to_string(n) + " examples");
      for (std::size_t e = 0; e < gm->rows; ++e) {
        for (std::size_t i = 0; i < n; ++i) gate[i] = gm->at(e, i);
        const auto r = pearson(onehot, gate);
        if (!r) {
          ++excluded;
        } else {
          sum += std::abs(*r);
          ++counted;
        }
      }
    }
  }
  if (excluded_out) *excluded_out = excluded;
  if (counted == 0)
    throw std::runtime_error("task_gate_correlation: every (task, gate) pair was excluded");
  return sum / static_cast<double>(counted);
}

namespace {

std::size_t eval_threads(std::size_t jobs) {
  std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SIRA_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end && *end == '\0' && v >= 1) n = std::min<std::size_t>(n, v);
  }
  return std::min(n, jobs);
}

}  // namespace

EvalStats evaluate(const ExperimentConfig& cfg, const ToyModel& model,
                   const std::vector<Example>& eval_set) {
  if (eval_set.empty()) throw std::invalid_argument("evaluate: empty eval set");
  const std::size_t n = eval_set.size();

  std::vector<BatchResult> results(n);
  const std::size_t workers = eval_threads(n);
  auto run_range = [&](std::size_t tid) {
    for (std::size_t i = tid; i < n; i += workers) {
      RngState unused{0, 0};  // inference consumes no randomness
      results[i] = model_forward(model, eval_set[i].inputs, eval_set[i].targets,
                                 cfg.seq_len, unused, false, nullptr);
    }
  };
  if (workers <= 1) {
    run_range(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(run_range, t);
    for (auto& th : pool) th.join();
  }

  // Reduce in example order so totals do not depend on the worker count.
  EvalStats stats;
  std::array<std::vector<std::size_t>, 4> accepted_counts;
  for (std::size_t li = 0; li < 4; ++li)
    accepted_counts[li].assign(model.layers[li].bank.size(), 0);
  std::size_t accepted_total = 0, dropped_total = 0;
  std::array<Matrix, 4> gate_means;
  for (std::size_t li = 0; li < 4; ++li)
    gate_means[li] = Matrix(model.layers[li].bank.size(), n);

  for (std::size_t i = 0; i < n; ++i) {
    const BatchResult& r = results[i];
    stats.mse += r.mse;
    stats.aux += r.aux;
    for (std::size_t li = 0; li < 4; ++li) {
      stats.entropy[li] += r.entropy[li];
      accepted_total += r.accepted[li];
      dropped_total += r.dropped[li];
      for (std::size_t e = 0; e < accepted_counts[li].size(); ++e)
        accepted_counts[li][e] += r.accepted_per_expert[li][e];
      for (std::size_t e = 0; e < gate_means[li].rows; ++e)
        gate_means[li].at(e, i) = r.example_gate_means[li].at(e, 0);
    }
  }
  stats.mse /= static_cast<double>(n);
  stats.aux /= static_cast<double>(n);
  for (auto& h : stats.entropy) h /= static_cast<double>(n);
  stats.drop_rate = (accepted_total + dropped_total) == 0
                        ? 0.0
                        : static_cast<double>(dropped_total) /
                              static_cast<double>(accepted_total + dropped_total);

  double cv_sum = 0.0;
  std::size_t cv_layers = 0;
  for (std::size_t li = 0; li < 4; ++li) {
    const auto& counts = accepted_counts[li];
    const double total = static_cast<double>(
        std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    auto& shares = stats.utilization[li];
    shares.assign(counts.size(), 0.0);
    if (total == 0.0) continue;
    for (std::size_t e = 0; e < counts.size(); ++e)
      shares[e] = static_cast<double>(counts[e]) / total;
    const double mean = 1.0 / static_cast<double>(counts.size());
    double var = 0.0;
    for (double s : shares) var += (s - mean) * (s - mean);
    var /= static_cast<double>(counts.size());
    cv_sum += std::sqrt(var) / mean;
    ++cv_layers;
  }
  stats.utilization_cv = cv_layers == 0 ? 0.0 : cv_sum / static_cast<double>(cv_layers);

  std::vector<std::size_t> task_ids(n);
  for (std::size_t i = 0; i < n; ++i) task_ids[i] = eval_set[i].task;
  std::vector<const Matrix*> gm{&gate_means[0], &gate_means[1], &gate_means[2],
                                &gate_means[3]};
  try {
    std::size_t excluded = 0;
    stats.correlation = task_gate_correlation(task_ids, gm, cfg.num_tasks, &excluded);
    stats.correlation_excluded = excluded;
  } catch (const std::exception&) {
    stats.correlation.reset();
    stats.correlation_excluded = 0;
    for (std::size_t li = 0; li < 4; ++li) stats.correlation_excluded += gate_means[li].rows;
    stats.correlation_excluded *= cfg.num_tasks;
  }
  return stats;
}

std::vector<NamedParam> trainable_params(ToyModel& m) {
  std::vector<NamedParam> out;
  for (std::size_t li = 0; li < 4; ++li) {
    const std::string base = kLayerNames[li];
    SiraLayerParams& layer = m.layers[li];
    if (!layer.gate.weight.empty())
      out.push_back({base + ".gate", &layer.gate.weight});
    for (std::size_t e = 0; e < layer.bank.size(); ++e) {
      out.push_back({base + ".e" + std::to_string(e) + ".down",
                     &layer.bank.experts[e].down});
      out.push_back({base + ".e" + std::to_string(e) + ".up",
                     &layer.bank.experts[e].up});
    }
  }
  return out;
}

std::vector<const Matrix*> align_grads(const ToyModel& m, const ModelGrads& g) {
  std::vector<const Matrix*> out;
  for (std::size_t li = 0; li < 4; ++li) {
    if (!m.layers[li].gate.weight.empty()) out.push_back(&g.layer[li].gate_weight);
    for (std::size_t e = 0; e < m.layers[li].bank.size(); ++e) {
      out.push_back(&g.layer[li].expert_down[e]);
      out.push_back(&g.layer[li].expert_up[e]);
    }
  }
  return out;
}

TrainState init_train_state(const ExperimentConfig& cfg, ToyModel& model) {
  TrainState s;
  s.train_rng = train_stream(cfg.seed);
  for (const NamedParam& p : trainable_params(model)) {
    s.adam_m.emplace_back(p.tensor->rows, p.tensor->cols);
    s.adam_v.emplace_back(p.tensor->rows, p.tensor->cols);
  }
  return s;
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void adam_step(double lr, std::size_t t, const std::vector<NamedParam>& params,
               const std::vector<const Matrix*>& grads, TrainState& state) {
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& w = *params[i].tensor;
    const Matrix& g = *grads[i];
    Matrix& m = state.adam_m[i];
    Matrix& v = state.adam_v[i];
    for (std::size_t j = 0; j < w.data.size(); ++j) {
      m.data[j] = kAdamBeta1 * m.data[j] + (1.0 - kAdamBeta1) * g.data[j];
      v.data[j] = kAdamBeta2 * v.data[j] + (1.0 - kAdamBeta2) * g.data[j] * g.data[j];
      w.data[j] -= lr * (m.data[j] / bc1) / (std::sqrt(v.data[j] / bc2) + kAdamEps);
    }
  }
}

}  // namespace

TrainState train(const ExperimentConfig& cfg, ToyModel& model,
                 const std::vector<SyntheticTask>& tasks,
                 const std::vector<Example>& eval_set, TrainState state,
                 const TrainHooks& hooks) {
  validate_config(cfg);
  auto params = trainable_params(model);
  if (state.adam_m.size() != params.size() || state.adam_v.size() != params.size())
    throw std::invalid_argument("train: optimizer state does not match the model");

  auto run_eval = [&](std::size_t step, std::optional<double> train_loss) {
    EvalRecord rec;
    rec.step = step;
    rec.train_loss = train_loss;
    rec.stats = evaluate(cfg, model, eval_set);
    rec.is_best = rec.stats.mse < state.best_val;
    if (rec.is_best) {
      state.best_val = rec.stats.mse;
      state.best_step = step;
    }
    if (hooks.on_eval) hooks.on_eval(rec);
    if (rec.is_best && hooks.on_best) hooks.on_best(model, state);
  };

  if (state.step == 0) run_eval(0, std::nullopt);

  double window_loss = 0.0;
  std::size_t window_count = 0;
  for (std::size_t step = state.step + 1; step <= cfg.steps; ++step) {
    Batch batch = generate_batch(cfg, tasks, cfg.batch_size, state.train_rng);
    ModelCache cache;
    BatchResult fwd = model_forward(model, batch.inputs, batch.targets, cfg.seq_len,
                                    state.train_rng, true, &cache);
    if (!std::isfinite(fwd.loss)) throw TrainingDiverged(step, fwd.loss);
    const ModelGrads grads = model_backward(model, cache, batch.targets);
    adam_step(cfg.lr, step, params, align_grads(model, grads), state);
    state.step = step;
    window_loss += fwd.loss;
    ++window_count;
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      run_eval(step, window_loss / static_cast<double>(window_count));
      window_loss = 0.0;
      window_count = 0;
    }
  }
  return state;
}

}  // namespace sira
