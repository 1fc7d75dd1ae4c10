// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "sira/runner.hpp"

namespace {

void add_common_options(CLI::App* cmd, sira::RunOptions& opt) {
  cmd->add_option("--config", opt.config_path, "JSON config file");
  cmd->add_option("--override", opt.overrides,
                  "KEY=VALUE config override, repeatable, applied in order");
  cmd->add_option("--seed", opt.seed, "Run seed (overrides the config)");
  cmd->add_option("--out", opt.out_dir, "Output directory (overrides the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse mixture of low-rank adapters: training and analysis runs"};
  app.require_subcommand(1);

  sira::RunOptions train_opt;
  CLI::App* train = app.add_subcommand(
      "train", "Train and write metrics.jsonl, best/final checkpoints and summary.csv");
  add_common_options(train, train_opt);
  train->add_option("--resume", train_opt.resume_path, "Checkpoint to continue from");

  sira::RunOptions eval_opt;
  std::string eval_ckpt;
  CLI::App* eval = app.add_subcommand(
      "eval", "Restore a checkpoint and print one evaluation record as JSON");
  add_common_options(eval, eval_opt);
  eval->add_option("checkpoint", eval_ckpt, "Checkpoint file")->required();

  sira::RunOptions ablate_opt;
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "Sweep one config axis; one ablation.csv row per value per seed");
  add_common_options(ablate, ablate_opt);
  ablate
      ->add_option("axis", axis,
                   "top_k | capacity | aux_weight | expert_dropout_rate | mode")
      ->required();
  ablate->add_option("--values", values, "Axis values (default: built-in grid)")
      ->delimiter(',');
  ablate->add_option("--seeds", seeds, "Seeds to repeat over (default: config seed)")
      ->delimiter(',');

  sira::RunOptions verify_opt;
  CLI::App* verify =
      app.add_subcommand("verify", "Run the fast self-contained property suite");
  add_common_options(verify, verify_opt);

  std::string rt_ckpt;
  CLI::App* roundtrip =
      app.add_subcommand("roundtrip", "Check checkpoint integrity byte for byte");
  roundtrip->add_option("checkpoint", rt_ckpt, "Checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return sira::run_train(train_opt);
    if (eval->parsed()) return sira::run_eval(eval_opt, eval_ckpt);
    if (ablate->parsed()) return sira::run_ablate(ablate_opt, axis, values, seeds);
    if (verify->parsed()) return sira::run_verify(verify_opt);
    if (roundtrip->parsed()) return sira::run_roundtrip(rt_ckpt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
