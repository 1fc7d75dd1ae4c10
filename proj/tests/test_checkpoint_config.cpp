// SPDX-License-Identifier: Apache-2.0
//
// Config plumbing and persistence: strict JSON parsing, canonical echoes,
// overrides, the run digest, checkpoint round-trips, corruption detection,
// and bit-exact resume of an interrupted run.

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sira/checkpoint.hpp"
#include "sira/config.hpp"
#include "sira/harness.hpp"
#include "sira/hash.hpp"
#include "sira/matrix.hpp"

namespace {

using namespace sira;
namespace fs = std::filesystem;

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.model.d_model = 10;
  cfg.model.layer.rank = 2;
  cfg.model.layer.num_experts = 3;
  cfg.model.layer.top_k = 2;
  cfg.model.layer.capacity = 4;
  cfg.seq_len = 4;
  cfg.num_tasks = 2;
  cfg.task_rank = 2;
  cfg.batch_size = 2;
  cfg.steps = 10;
  cfg.eval_every = 5;
  cfg.eval_sequences = 4;
  cfg.seed = 23;
  return cfg;
}

fs::path temp_file(const char* name) {
  return fs::temp_directory_path() / name;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

TrainState quick_train(const ExperimentConfig& cfg, ToyModel& model) {
  std::vector<SyntheticTask> tasks = make_tasks(cfg, task_stream(cfg.seed));
  std::vector<Example> eval_set = make_eval_set(cfg, tasks, eval_stream(cfg.seed));
  TrainState state = init_train_state(cfg, model);
  return train(cfg, model, tasks, eval_set, std::move(state), TrainHooks{});
}

}  // namespace

TEST_CASE("a minimal config supplies defaults and echoes canonically") {
  ExperimentConfig cfg = config_from_json_text("{\"mode\":\"sira\"}");
  CHECK(cfg.model.layer.mode == LayerMode::sira);
  CHECK(cfg.model.layer.rank == 4);
  CHECK(cfg.model.layer.num_experts == 16);
  CHECK(cfg.model.layer.top_k == 4);
  CHECK(cfg.model.layer.capacity == 4);
  CHECK(cfg.model.layer.expert_dropout_rate == 0.5);
  CHECK(cfg.model.layer.aux_weight == 0.01);
  CHECK(cfg.lr == 5e-4);
  CHECK(cfg.eval_every == 100);

  const std::string echo = config_to_json_text(cfg);
  ExperimentConfig back = config_from_json_text(echo);
  CHECK(config_to_json_text(back) == echo);
}

TEST_CASE("parsing is strict about unknown and missing fields") {
  CHECK_THROWS_WITH_AS(config_from_json_text("{\"mode\":\"sira\",\"ranks\":4}"),
                       doctest::Contains("ranks"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json_text("{\"rank\":4}"),
                       doctest::Contains("mode"), std::invalid_argument);
  CHECK_THROWS(config_from_json_text("{\"mode\":\"sira\",\"rank\":\"four\"}"));
  CHECK_THROWS(config_from_json_text("not json"));
}

TEST_CASE("overrides parse JSON values with a string fallback") {
  ExperimentConfig cfg = tiny_config();
  apply_override(cfg, "rank=8");
  CHECK(cfg.model.layer.rank == 8);
  apply_override(cfg, "aux_weight=0.25");
  CHECK(cfg.model.layer.aux_weight == 0.25);
  apply_override(cfg, "mode=dense_lora");
  CHECK(cfg.model.layer.mode == LayerMode::dense_lora);
  apply_override(cfg, "capacity_at_inference=false");
  CHECK_FALSE(cfg.model.layer.capacity_at_inference);
  apply_override(cfg, "out_dir=runs/elsewhere");
  CHECK(cfg.out_dir == "runs/elsewhere");
  CHECK_THROWS_WITH_AS(apply_override(cfg, "no_such_key=1"),
                       doctest::Contains("no_such_key"), std::invalid_argument);
  CHECK_THROWS(apply_override(cfg, "missing_equals"));
}

TEST_CASE("validation rejects out-of-range fields by name") {
  ExperimentConfig cfg = tiny_config();
  cfg.model.layer.top_k = 0;
  CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("top_k"),
                       std::invalid_argument);
  cfg = tiny_config();
  cfg.lr = 0.0;
  CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("lr"),
                       std::invalid_argument);
  cfg = tiny_config();
  cfg.eval_every = 0;
  CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("eval_every"),
                       std::invalid_argument);
}

TEST_CASE("the run digest tracks everything except steps and out_dir") {
  ExperimentConfig a = tiny_config();
  ExperimentConfig b = a;
  b.steps = 999;
  b.out_dir = "runs/other";
  CHECK(config_digest(a) == config_digest(b));
  b = a;
  b.model.layer.rank = 3;
  CHECK(config_digest(a) != config_digest(b));
  b = a;
  b.seed = a.seed + 1;
  CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("checkpoints survive a save/load/save round trip byte for byte") {
  ExperimentConfig cfg = tiny_config();
  ToyModel model = init_toy_model(cfg.model, model_stream(cfg.seed));
  TrainState state = quick_train(cfg, model);

  const fs::path p1 = temp_file("sira_test_a.sira");
  const fs::path p2 = temp_file("sira_test_b.sira");
  save_checkpoint(p1.string(), cfg, model, state);

  ToyModel restored = init_toy_model(cfg.model, model_stream(cfg.seed));
  TrainState loaded = load_checkpoint(p1.string(), cfg, restored);
  CHECK(loaded.step == state.step);
  CHECK(loaded.best_val == state.best_val);
  CHECK(loaded.best_step == state.best_step);
  CHECK(loaded.train_rng.seed == state.train_rng.seed);
  CHECK(loaded.train_rng.position == state.train_rng.position);
  for (std::size_t li = 0; li < 4; ++li)
    for (std::size_t e = 0; e < model.layers[li].bank.size(); ++e) {
      CHECK(max_abs_diff(model.layers[li].bank.experts[e].down,
                         restored.layers[li].bank.experts[e].down) == 0.0);
      CHECK(max_abs_diff(model.layers[li].bank.experts[e].up,
                         restored.layers[li].bank.experts[e].up) == 0.0);
    }

  save_checkpoint(p2.string(), cfg, restored, loaded);
  CHECK(read_bytes(p1) == read_bytes(p2));

  RoundtripReport rep = verify_checkpoint(p1.string());
  CHECK(rep.ok);
  CHECK(rep.stored_probe == rep.recomputed_probe);

  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("corruption, truncation and config drift are detected loudly") {
  ExperimentConfig cfg = tiny_config();
  ToyModel model = init_toy_model(cfg.model, model_stream(cfg.seed));
  TrainState state = quick_train(cfg, model);
  const fs::path p = temp_file("sira_test_corrupt.sira");
  save_checkpoint(p.string(), cfg, model, state);
  std::vector<char> bytes = read_bytes(p);

  // Flip one payload byte near the end: some tensor checksum must fail.
  std::vector<char> flipped = bytes;
  flipped[flipped.size() - 20] ^= 0x40;
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
  }
  CHECK_THROWS_AS(read_snapshot(p.string()), CheckpointError);

  // Truncate the file mid-tensor.
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(read_snapshot(p.string()), CheckpointError);

  // Corrupt the magic.
  std::vector<char> wrong = bytes;
  wrong[0] = 'X';
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(wrong.data(), static_cast<std::streamsize>(wrong.size()));
  }
  CHECK_THROWS_AS(read_snapshot(p.string()), CheckpointError);

  // Restore the good bytes; loading under a different config must fail.
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  ExperimentConfig other = cfg;
  other.model.layer.rank = 3;
  ToyModel fresh = init_toy_model(other.model, model_stream(other.seed));
  CHECK_THROWS_AS(load_checkpoint(p.string(), other, fresh), CheckpointError);

  // steps may differ: that is the resume contract.
  ExperimentConfig longer = cfg;
  longer.steps = cfg.steps * 2;
  ToyModel ok = init_toy_model(longer.model, model_stream(longer.seed));
  CHECK_NOTHROW(load_checkpoint(p.string(), longer, ok));
  fs::remove(p);
}

TEST_CASE("the probe digest pins the forward behavior") {
  ExperimentConfig cfg = tiny_config();
  ToyModel model = init_toy_model(cfg.model, model_stream(cfg.seed));
  const std::uint64_t before = probe_digest(cfg, model);
  CHECK(before == probe_digest(cfg, model));
  model.layers[2].bank.experts[1].up.at(0, 0) += 0.5;
  CHECK(before != probe_digest(cfg, model));
}

TEST_CASE("resuming an interrupted run is bit-exact") {
  ExperimentConfig cfg = tiny_config();  // 10 steps
  std::vector<SyntheticTask> tasks = make_tasks(cfg, task_stream(cfg.seed));
  std::vector<Example> eval_set = make_eval_set(cfg, tasks, eval_stream(cfg.seed));

  ToyModel straight = init_toy_model(cfg.model, model_stream(cfg.seed));
  TrainState full = train(cfg, straight, tasks, eval_set,
                          init_train_state(cfg, straight), TrainHooks{});

  ExperimentConfig half = cfg;
  half.steps = 5;
  ToyModel split = init_toy_model(half.model, model_stream(half.seed));
  TrainState part = train(half, split, tasks, eval_set,
                          init_train_state(half, split), TrainHooks{});
  const fs::path p = temp_file("sira_test_resume.sira");
  save_checkpoint(p.string(), half, split, part);

  ToyModel resumed = init_toy_model(cfg.model, model_stream(cfg.seed));
  TrainState rest = load_checkpoint(p.string(), cfg, resumed);
  rest = train(cfg, resumed, tasks, eval_set, std::move(rest), TrainHooks{});
  fs::remove(p);

  CHECK(rest.step == full.step);
  CHECK(rest.best_val == full.best_val);
  CHECK(rest.best_step == full.best_step);
  CHECK(rest.train_rng.position == full.train_rng.position);
  CHECK(probe_digest(cfg, resumed) == probe_digest(cfg, straight));
  std::vector<NamedParam> a = trainable_params(straight);
  std::vector<NamedParam> b = trainable_params(resumed);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(hash_matrix(*a[i].tensor) == hash_matrix(*b[i].tensor));
  for (std::size_t i = 0; i < full.adam_m.size(); ++i) {
    CHECK(hash_matrix(full.adam_m[i]) == hash_matrix(rest.adam_m[i]));
    CHECK(hash_matrix(full.adam_v[i]) == hash_matrix(rest.adam_v[i]));
  }
}
