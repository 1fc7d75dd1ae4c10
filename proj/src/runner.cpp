// SPDX-License-Identifier: Apache-2.0
#include "sira/runner.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sira/checkpoint.hpp"
#include "sira/dispatch.hpp"
#include "sira/gating.hpp"
#include "sira/grad_check.hpp"
#include "sira/hash.hpp"
#include "sira/sira_layer.hpp"
#include "sira/toy_model.hpp"

namespace sira {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Shortest round-trip representation; identical runs print identical text.
std::string num(double v) { return json(v).dump(); }

double mean4(const std::array<double, 4>& a) { return (a[0] + a[1] + a[2] + a[3]) / 4.0; }

json record_to_json(const EvalRecord& r) {
  json j;
  j["step"] = r.step;
  j["train_loss"] = r.train_loss ? json(*r.train_loss) : json(nullptr);
  j["eval_mse"] = r.stats.mse;
  j["eval_aux"] = r.stats.aux;
  j["eval_loss"] = r.stats.mse + r.stats.aux;
  j["entropy"] = r.stats.entropy;
  j["drop_rate"] = r.stats.drop_rate;
  json util = json::array();
  for (const auto& u : r.stats.utilization) util.push_back(u);
  j["utilization"] = util;
  j["utilization_cv"] = r.stats.utilization_cv;
  j["task_gate_correlation"] =
      r.stats.correlation ? json(*r.stats.correlation) : json(nullptr);
  j["correlation_excluded"] = r.stats.correlation_excluded;
  j["is_best"] = r.is_best;
  return j;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string summary_header() {
  return "mode,seed,steps,rank,num_experts,top_k,capacity,expert_dropout_rate,"
         "aux_weight,final_step,final_train_loss,final_eval_mse,final_eval_loss,"
         "best_eval_mse,best_step,initial_entropy,final_entropy,final_drop_rate,"
         "final_utilization_cv,final_task_gate_correlation,trainable_params,config";
}

std::string summary_row(const RunArtifacts& art) {
  const ExperimentConfig& cfg = art.cfg;
  const EvalRecord& first = art.records.front();
  const EvalRecord& last = art.records.back();
  SiraConfig lc = cfg.model.layer;
  lc.d_in = lc.d_out = cfg.model.d_model;
  std::ostringstream os;
  os << mode_to_string(lc.mode) << ',' << cfg.seed << ',' << cfg.steps << ','
     << lc.rank << ',' << lc.num_experts << ',' << lc.top_k << ',' << lc.capacity
     << ',' << num(lc.expert_dropout_rate) << ',' << num(lc.aux_weight) << ','
     << last.step << ','
     << (last.train_loss ? num(*last.train_loss) : std::string()) << ','
     << num(last.stats.mse) << ',' << num(last.stats.mse + last.stats.aux) << ','
     << num(art.state.best_val) << ',' << art.state.best_step << ','
     << num(mean4(first.stats.entropy)) << ',' << num(mean4(last.stats.entropy))
     << ',' << num(last.stats.drop_rate) << ',' << num(last.stats.utilization_cv)
     << ','
     << (last.stats.correlation ? num(*last.stats.correlation) : std::string())
     << ',' << 4 * count_trainable_params(lc) << ','
     << csv_field(config_to_json_text(cfg));
  return os.str();
}

Matrix random_matrix(std::size_t r, std::size_t c, RngState& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.data) v = scale * rng.next_gaussian();
  return m;
}

// ---- verify subcommand: fast self-contained property checks ----

bool verify_fresh_identity(std::string& detail) {
  ModelConfig mc;
  ToyModel m = init_toy_model(mc, RngState{41, 0});
  RngState data{7, 0};
  for (int i = 0; i < 5; ++i) {
    Matrix x = random_matrix(mc.d_model, 2 * 8, data);
    RngState fwd{0, 0};
    BatchResult r = model_forward(m, x, Matrix(), 8, fwd, false);
    Matrix ref = model_frozen_forward(m, x, 8);
    if (hash_matrix(r.out) != hash_matrix(ref)) {
      detail = "fresh adapters change the output";
      return false;
    }
  }
  return true;
}

bool verify_mode_equivalence(std::string& detail) {
  RngState meta{9, 0};
  for (int i = 0; i < 10; ++i) {
    const std::size_t d = 4 + meta.next_below(5);
    const std::size_t S = 3 + meta.next_below(4);
    const std::size_t E = 2 + meta.next_below(3);
    Matrix w0 = random_matrix(d, d, meta, 0.4);
    Matrix x = random_matrix(d, S, meta);

    SiraConfig one;
    one.d_in = one.d_out = d;
    one.rank = 2;
    one.num_experts = 1;
    one.top_k = 1;
    one.capacity = S;
    one.expert_dropout_rate = 0.0;
    one.mode = LayerMode::sira;
    SiraConfig dense = one;
    dense.mode = LayerMode::dense_lora;
    SiraLayerParams pa = init_sira_layer(one, w0, RngState{1000u + i, 0});
    for (auto& e : pa.bank.experts)
      e.up = random_matrix(e.up.rows, e.up.cols, meta, 0.2);
    SiraLayerParams pb = init_sira_layer(dense, w0, RngState{1000u + i, 0});
    pb.bank = pa.bank;
    RngState fa{0, 0}, fb{0, 0};
    LayerOutput ya = layer_forward(one, pa, x, fa, false);
    LayerOutput yb = layer_forward(dense, pb, x, fb, false);
    if (max_abs_diff(ya.y, yb.y) > 1e-12) {
      detail = "single-expert routing differs from the dense adapter";
      return false;
    }

    SiraConfig all;
    all.d_in = all.d_out = d;
    all.rank = 2;
    all.num_experts = E;
    all.top_k = E;
    all.capacity = S;
    all.expert_dropout_rate = 0.0;
    all.mode = LayerMode::sira;
    SiraConfig moe = all;
    moe.mode = LayerMode::full_moe;
    SiraLayerParams pc = init_sira_layer(all, w0, RngState{2000u + i, 0});
    for (auto& e : pc.bank.experts)
      e.up = random_matrix(e.up.rows, e.up.cols, meta, 0.2);
    SiraLayerParams pf = init_sira_layer(moe, w0, RngState{2000u + i, 0});
    pf.bank = pc.bank;
    RngState fc{0, 0}, ff{0, 0};
    LayerOutput yc = layer_forward(all, pc, x, fc, false);
    LayerOutput yf = layer_forward(moe, pf, x, ff, false);
    if (max_abs_diff(yc.y, yf.y) > 1e-12) {
      detail = "top-k = E routing differs from the soft mixture";
      return false;
    }
  }
  return true;
}

bool verify_layer_gradients(std::string& detail) {
  SiraConfig cfg;
  cfg.d_in = cfg.d_out = 4;
  cfg.rank = 2;
  cfg.num_experts = 3;
  cfg.top_k = 2;
  cfg.capacity = 2;
  cfg.expert_dropout_rate = 0.0;
  cfg.aux_weight = 0.01;
  RngState rng{314, 0};
  Matrix w0 = random_matrix(4, 4, rng, 0.3);
  SiraLayerParams params = init_sira_layer(cfg, w0, RngState{99, 0});
  for (auto& e : params.bank.experts)
    e.up = random_matrix(e.up.rows, e.up.cols, rng, 0.1);
  Matrix x = random_matrix(4, 5, rng);

  auto loss = [&]() {
    RngState fwd{0, 0};
    LayerOutput out = layer_forward(cfg, params, x, fwd, true);
    double v = out.aux;
    for (double t : out.y.data) v += 0.5 * t * t;
    return v;
  };
  RngState fwd{0, 0};
  LayerCache cache;
  LayerOutput out = layer_forward(cfg, params, x, fwd, true, &cache);
  LayerGrads g = layer_backward(cfg, params, cache, out.y, 1.0);

  std::vector<Matrix*> tunable{&params.gate.weight};
  std::vector<const Matrix*> analytic{&g.gate_weight};
  for (std::size_t e = 0; e < params.bank.size(); ++e) {
    tunable.push_back(&params.bank.experts[e].down);
    analytic.push_back(&g.expert_down[e]);
    tunable.push_back(&params.bank.experts[e].up);
    analytic.push_back(&g.expert_up[e]);
  }
  const double err = grad_check(loss, tunable, analytic, 1e-5);
  if (!(err < 1e-5)) {
    detail = "max relative gradient error " + num(err);
    return false;
  }
  return true;
}

bool verify_dispatch_conservation(std::string& detail) {
  RngState rng{2718, 0};
  for (int it = 0; it < 200; ++it) {
    const std::size_t E = 1 + rng.next_below(6);
    const std::size_t S = 1 + rng.next_below(8);
    const std::size_t K = 1 + rng.next_below(E);
    const std::size_t C = 1 + rng.next_below(5);
    GateNetwork gn;
    gn.weight = random_matrix(3, E, rng);
    Matrix x = random_matrix(3, S, rng);
    RngState fwd = rng.split(static_cast<std::uint64_t>(it) + 1);
    GateDecision d = gate_forward(gn, x, K, 0.3, fwd, true);
    DispatchPlan plan = build_plan(d, C);
    std::size_t accepted = 0;
    for (const auto& list : plan.per_expert_tokens) {
      if (list.size() > C) {
        detail = "an expert exceeds its capacity";
        return false;
      }
      accepted += list.size();
    }
    std::size_t routed = 0;
    for (std::size_t c : plan.routed_counts) routed += c;
    if (accepted + plan.dropped_pairs.size() != routed || routed != S * K) {
      detail = "accepted + dropped does not balance the routed pairs";
      return false;
    }
  }
  return true;
}

bool verify_aux_closed_forms(std::string& detail) {
  const std::size_t E = 8, S = 5, K = 3;
  GateDecision d;
  d.probs_pre_dropout = Matrix(E, S, 1.0 / E);
  d.probs_post_dropout = d.probs_pre_dropout;
  d.dropout_mask = Matrix(E, S, 1.0);
  d.gate_values = Matrix(E, S, 0.0);
  d.top_k = K;
  RngState rng{5, 0};
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<std::size_t> sel;
    while (sel.size() < K) {
      std::size_t e = rng.next_below(E);
      if (std::find(sel.begin(), sel.end(), e) == sel.end()) sel.push_back(e);
    }
    std::sort(sel.begin(), sel.end());
    for (std::size_t e : sel) d.gate_values.at(e, s) = 1.0 / E;
    d.selected.push_back(sel);
  }
  DispatchPlan plan = build_plan(d, S);
  const double uniform = aux_loss(plan, mean_gate_per_expert(d));
  if (std::abs(uniform - static_cast<double>(K) / (E * E)) > 1e-12) {
    detail = "uniform gating is not K/E^2, got " + num(uniform);
    return false;
  }

  GateDecision h;
  h.probs_pre_dropout = Matrix(E, S, 0.0);
  for (std::size_t s = 0; s < S; ++s) h.probs_pre_dropout.at(2, s) = 1.0;
  h.probs_post_dropout = h.probs_pre_dropout;
  h.dropout_mask = Matrix(E, S, 1.0);
  h.gate_values = h.probs_pre_dropout;
  h.top_k = 1;
  for (std::size_t s = 0; s < S; ++s) h.selected.push_back({2});
  DispatchPlan hp = build_plan(h, S);
  const double hot = aux_loss(hp, mean_gate_per_expert(h));
  if (std::abs(hot - 1.0 / E) > 1e-12) {
    detail = "a fully collapsed gate is not 1/E, got " + num(hot);
    return false;
  }
  return true;
}

bool verify_entropy_bounds(std::string& detail) {
  GateDecision u;
  u.probs_pre_dropout = Matrix(16, 3, 1.0 / 16.0);
  if (std::abs(gate_entropy(u) - std::log(16.0)) > 1e-9) {
    detail = "uniform entropy is not ln 16";
    return false;
  }
  GateDecision one;
  one.probs_pre_dropout = Matrix(16, 3, 0.0);
  for (std::size_t s = 0; s < 3; ++s) one.probs_pre_dropout.at(4, s) = 1.0;
  if (gate_entropy(one) != 0.0) {
    detail = "one-hot entropy is not exactly 0";
    return false;
  }
  return true;
}

ExperimentConfig small_verify_config() {
  ExperimentConfig cfg;
  cfg.model.d_model = 16;
  cfg.model.layer.rank = 2;
  cfg.model.layer.num_experts = 4;
  cfg.model.layer.top_k = 2;
  cfg.model.layer.capacity = 6;
  cfg.seq_len = 6;
  cfg.batch_size = 4;
  cfg.steps = 20;
  cfg.eval_every = 10;
  cfg.eval_sequences = 8;
  cfg.seed = 3;
  return cfg;
}

bool verify_run_determinism(std::string& detail) {
  const ExperimentConfig cfg = small_verify_config();
  RunArtifacts a = execute_run(cfg, "", TrainHooks{});
  RunArtifacts b = execute_run(cfg, "", TrainHooks{});
  if (probe_digest(cfg, a.model) != probe_digest(cfg, b.model)) {
    detail = "two identical runs end with different weights";
    return false;
  }
  json ja = json::array(), jb = json::array();
  for (const auto& r : a.records) ja.push_back(record_to_json(r));
  for (const auto& r : b.records) jb.push_back(record_to_json(r));
  if (ja.dump() != jb.dump()) {
    detail = "two identical runs log different records";
    return false;
  }
  return true;
}

bool verify_checkpoint_roundtrip(std::string& detail) {
  const ExperimentConfig cfg = small_verify_config();
  RunArtifacts art = execute_run(cfg, "", TrainHooks{});
  const fs::path p = fs::temp_directory_path() / "sira_verify_roundtrip.sira";
  save_checkpoint(p.string(), cfg, art.model, art.state);
  RoundtripReport rep = verify_checkpoint(p.string());
  std::error_code ec;
  fs::remove(p, ec);
  if (!rep.ok) {
    detail = rep.detail;
    return false;
  }
  return true;
}

void apply_axis(ExperimentConfig& cfg, const std::string& axis, const std::string& value) {
  if (axis == "mode") {
    if (value == "sira_no_aux") {
      apply_override(cfg, "mode=sira");
      apply_override(cfg, "aux_weight=0");
    } else if (value == "sira_no_expert_dropout") {
      apply_override(cfg, "mode=sira");
      apply_override(cfg, "expert_dropout_rate=0");
    } else {
      apply_override(cfg, "mode=" + value);
    }
  } else {
    apply_override(cfg, axis + "=" + value);
  }
}

}  // namespace

ExperimentConfig resolve_config(const RunOptions& opt) {
  ExperimentConfig cfg =
      opt.config_path.empty() ? ExperimentConfig{} : load_config_file(opt.config_path);
  for (const auto& ov : opt.overrides) apply_override(cfg, ov);
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  validate_config(cfg);
  return cfg;
}

RunArtifacts execute_run(const ExperimentConfig& cfg, const std::string& resume_path,
                         const TrainHooks& hooks) {
  validate_config(cfg);
  RunArtifacts art;
  art.cfg = cfg;
  const std::vector<SyntheticTask> tasks = make_tasks(cfg, task_stream(cfg.seed));
  const std::vector<Example> eval_set = make_eval_set(cfg, tasks, eval_stream(cfg.seed));
  art.model = init_toy_model(cfg.model, model_stream(cfg.seed));
  TrainState state;
  if (!resume_path.empty()) state = load_checkpoint(resume_path, cfg, art.model);
  else state = init_train_state(cfg, art.model);

  TrainHooks wrapped;
  wrapped.on_eval = [&](const EvalRecord& r) {
    art.records.push_back(r);
    if (hooks.on_eval) hooks.on_eval(r);
  };
  wrapped.on_best = hooks.on_best;
  art.state = train(cfg, art.model, tasks, eval_set, std::move(state), wrapped);

  // A resume that is already at cfg.steps trains nothing; still record where
  // the model stands so every run yields at least one evaluation.
  if (art.records.empty()) {
    EvalRecord r;
    r.step = art.state.step;
    r.stats = evaluate(cfg, art.model, eval_set);
    art.records.push_back(r);
    if (hooks.on_eval) hooks.on_eval(r);
  }
  return art;
}

int run_train(const RunOptions& opt) {
  const ExperimentConfig cfg = resolve_config(opt);
  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  std::ofstream metrics(out / "metrics.jsonl", std::ios::trunc);
  if (!metrics) {
    std::cerr << "error: cannot write " << (out / "metrics.jsonl").string() << "\n";
    return 1;
  }
  metrics << "{\"config\":" << config_to_json_text(cfg) << "}\n" << std::flush;

  TrainHooks hooks;
  hooks.on_eval = [&](const EvalRecord& r) {
    metrics << record_to_json(r).dump() << "\n" << std::flush;
    std::cout << "step " << r.step << "/" << cfg.steps << " eval_mse="
              << num(r.stats.mse) << (r.is_best ? " *" : "") << "\n";
  };
  hooks.on_best = [&](const ToyModel& m, const TrainState& s) {
    save_checkpoint((out / "best.sira").string(), cfg, m, s);
  };

  try {
    RunArtifacts art = execute_run(cfg, opt.resume_path, hooks);
    save_checkpoint((out / "final.sira").string(), cfg, art.model, art.state);
    std::ofstream csv(out / "summary.csv", std::ios::trunc);
    csv << summary_header() << "\n" << summary_row(art) << "\n";
    std::cout << "done: best_eval_mse=" << num(art.state.best_val) << " at step "
              << art.state.best_step << "; artifacts in " << cfg.out_dir << "\n";
    return 0;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << " (partial logs kept in " << cfg.out_dir
              << ")\n";
    return 2;
  }
}

int run_eval(const RunOptions& opt, const std::string& checkpoint_path) {
  const Snapshot snap = read_snapshot(checkpoint_path);
  ExperimentConfig cfg = opt.config_path.empty()
                             ? config_from_json_text(snap.config_echo)
                             : load_config_file(opt.config_path);
  for (const auto& ov : opt.overrides) apply_override(cfg, ov);
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  validate_config(cfg);

  ToyModel model = init_toy_model(cfg.model, model_stream(cfg.seed));
  const TrainState state = load_checkpoint(checkpoint_path, cfg, model);
  const std::vector<SyntheticTask> tasks = make_tasks(cfg, task_stream(cfg.seed));
  const std::vector<Example> eval_set = make_eval_set(cfg, tasks, eval_stream(cfg.seed));

  EvalRecord r;
  r.step = state.step;
  r.stats = evaluate(cfg, model, eval_set);
  json j = record_to_json(r);
  j["checkpoint"] = checkpoint_path;
  std::cout << j.dump() << "\n";
  return 0;
}

std::vector<std::string> default_ablation_values(const std::string& axis) {
  if (axis == "top_k" || axis == "capacity") return {"2", "4", "6", "8", "10", "12"};
  if (axis == "aux_weight") return {"0", "0.001", "0.01", "0.1"};
  if (axis == "expert_dropout_rate") return {"0", "0.25", "0.5", "0.75"};
  if (axis == "mode")
    return {"sira", "sira_no_aux", "sira_no_expert_dropout", "static_routing"};
  throw std::invalid_argument(
      "ablate: unknown axis \"" + axis +
      "\" (expected top_k, capacity, aux_weight, expert_dropout_rate, or mode)");
}

int run_ablate(const RunOptions& opt, const std::string& axis,
               std::vector<std::string> values, std::vector<std::uint64_t> seeds) {
  const ExperimentConfig base = resolve_config(opt);
  if (values.empty()) values = default_ablation_values(axis);
  else default_ablation_values(axis);  // validates the axis name
  if (seeds.empty()) seeds = {base.seed};

  fs::create_directories(base.out_dir);
  const fs::path csv_path = fs::path(base.out_dir) / "ablation.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) {
    std::cerr << "error: cannot write " << csv_path.string() << "\n";
    return 1;
  }
  csv << "axis,value," << summary_header() << "\n" << std::flush;

  for (const std::string& value : values) {
    for (std::uint64_t seed : seeds) {
      ExperimentConfig cfg = base;
      apply_axis(cfg, axis, value);
      cfg.seed = seed;
      validate_config(cfg);
      std::cout << "ablate " << axis << "=" << value << " seed=" << seed << std::flush;
      RunArtifacts art = execute_run(cfg, "", TrainHooks{});
      csv << csv_field(axis) << ',' << csv_field(value) << ',' << summary_row(art)
          << "\n" << std::flush;
      std::cout << " -> eval_mse=" << num(art.records.back().stats.mse) << "\n";
    }
  }
  std::cout << "wrote " << csv_path.string() << "\n";
  return 0;
}

int run_verify(const RunOptions&) {
  struct Check {
    const char* name;
    bool (*fn)(std::string&);
  };
  const Check checks[] = {
      {"fresh_adapter_identity", verify_fresh_identity},
      {"mode_equivalences", verify_mode_equivalence},
      {"layer_gradients", verify_layer_gradients},
      {"dispatch_conservation", verify_dispatch_conservation},
      {"load_balance_closed_forms", verify_aux_closed_forms},
      {"gate_entropy_bounds", verify_entropy_bounds},
      {"run_determinism", verify_run_determinism},
      {"checkpoint_roundtrip", verify_checkpoint_roundtrip},
  };
  int failures = 0;
  for (const Check& c : checks) {
    std::string detail;
    bool ok = false;
    try {
      ok = c.fn(detail);
    } catch (const std::exception& e) {
      detail = e.what();
    }
    std::cout << (ok ? "PASS " : "FAIL ") << c.name;
    if (!ok) {
      std::cout << ": " << detail;
      ++failures;
    }
    std::cout << "\n";
  }
  if (failures != 0) {
    std::cout << failures << " check(s) failed\n";
    return 1;
  }
  std::cout << "all checks passed\n";
  return 0;
}

int run_roundtrip(const std::string& checkpoint_path) {
  const RoundtripReport rep = verify_checkpoint(checkpoint_path);
  std::cout << (rep.ok ? "OK " : "MISMATCH ") << checkpoint_path << ": " << rep.detail
            << " (probe stored " << rep.stored_probe << ", recomputed "
            << rep.recomputed_probe << ")\n";
  return rep.ok ? 0 : 1;
}

}  // namespace sira
