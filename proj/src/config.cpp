// SPDX-License-Identifier: Apache-2.0
#include "sira/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "sira/hash.hpp"

namespace sira {

using nlohmann::json;

namespace {

std::size_t get_count(const json& v, const std::string& field) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    throw std::invalid_argument("config: field \"" + field + "\" must be an integer");
  if (v.is_number_integer() && v.get<long long>() < 0)
    throw std::invalid_argument("config: field \"" + field + "\" must be non-negative");
  return v.get<std::size_t>();
}

std::uint64_t get_u64(const json& v, const std::string& field) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    throw std::invalid_argument("config: field \"" + field + "\" must be an integer");
  if (v.is_number_integer() && v.get<long long>() < 0)
    throw std::invalid_argument("config: field \"" + field + "\" must be non-negative");
  return v.get<std::uint64_t>();
}

double get_real(const json& v, const std::string& field) {
  if (!v.is_number())
    throw std::invalid_argument("config: field \"" + field + "\" must be a number");
  return v.get<double>();
}

bool get_flag(const json& v, const std::string& field) {
  if (!v.is_boolean())
    throw std::invalid_argument("config: field \"" + field + "\" must be true or false");
  return v.get<bool>();
}

std::string get_str(const json& v, const std::string& field) {
  if (!v.is_string())
    throw std::invalid_argument("config: field \"" + field + "\" must be a string");
  return v.get<std::string>();
}

ExperimentConfig from_object(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  ExperimentConfig cfg;
  bool saw_mode = false;
  for (const auto& [key, value] : j.items()) {
    SiraConfig& lc = cfg.model.layer;
    if (key == "d_model") cfg.model.d_model = get_count(value, key);
    else if (key == "attention_sharpness") cfg.model.attention_sharpness = get_real(value, key);
    else if (key == "value_path_scale") cfg.model.value_path_scale = get_real(value, key);
    else if (key == "train_dropout") cfg.model.train_dropout = get_real(value, key);
    else if (key == "rank") lc.rank = get_count(value, key);
    else if (key == "num_experts") lc.num_experts = get_count(value, key);
    else if (key == "top_k") lc.top_k = get_count(value, key);
    else if (key == "capacity") lc.capacity = get_count(value, key);
    else if (key == "expert_dropout_rate") lc.expert_dropout_rate = get_real(value, key);
    else if (key == "aux_weight") lc.aux_weight = get_real(value, key);
    else if (key == "mode") { lc.mode = mode_from_string(get_str(value, key)); saw_mode = true; }
    else if (key == "capacity_at_inference") lc.capacity_at_inference = get_flag(value, key);
    else if (key == "dispatch_group") lc.group = group_from_string(get_str(value, key));
    else if (key == "init_std") lc.init_std = get_real(value, key);
    else if (key == "expert_scale") lc.expert_scale = get_real(value, key);
    else if (key == "seq_len") cfg.seq_len = get_count(value, key);
    else if (key == "num_tasks") cfg.num_tasks = get_count(value, key);
    else if (key == "task_rank") cfg.task_rank = get_count(value, key);
    else if (key == "task_map_scale") cfg.task_map_scale = get_real(value, key);
    else if (key == "context_strength") cfg.context_strength = get_real(value, key);
    else if (key == "task_noise") cfg.task_noise = get_real(value, key);
    else if (key == "batch_size") cfg.batch_size = get_count(value, key);
    else if (key == "lr") cfg.lr = get_real(value, key);
    else if (key == "steps") cfg.steps = get_count(value, key);
    else if (key == "eval_every") cfg.eval_every = get_count(value, key);
    else if (key == "eval_sequences") cfg.eval_sequences = get_count(value, key);
    else if (key == "seed") cfg.seed = get_u64(value, key);
    else if (key == "out_dir") cfg.out_dir = get_str(value, key);
    else throw std::invalid_argument("config: unknown field \"" + key + "\"");
  }
  if (!saw_mode) throw std::invalid_argument("config: missing required field \"mode\"");
  cfg.model.layer.d_in = cfg.model.d_model;
  cfg.model.layer.d_out = cfg.model.d_model;
  return cfg;
}

json to_object(const ExperimentConfig& cfg) {
  const SiraConfig& lc = cfg.model.layer;
  json j;
  j["d_model"] = cfg.model.d_model;
  j["attention_sharpness"] = cfg.model.attention_sharpness;
  j["value_path_scale"] = cfg.model.value_path_scale;
  j["train_dropout"] = cfg.model.train_dropout;
  j["rank"] = lc.rank;
  j["num_experts"] = lc.num_experts;
  j["top_k"] = lc.top_k;
  j["capacity"] = lc.capacity;
  j["expert_dropout_rate"] = lc.expert_dropout_rate;
  j["aux_weight"] = lc.aux_weight;
  j["mode"] = mode_to_string(lc.mode);
  j["capacity_at_inference"] = lc.capacity_at_inference;
  j["dispatch_group"] = group_to_string(lc.group);
  j["init_std"] = lc.init_std;
  j["expert_scale"] = lc.expert_scale;
  j["seq_len"] = cfg.seq_len;
  j["num_tasks"] = cfg.num_tasks;
  j["task_rank"] = cfg.task_rank;
  j["task_map_scale"] = cfg.task_map_scale;
  j["context_strength"] = cfg.context_strength;
  j["task_noise"] = cfg.task_noise;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["steps"] = cfg.steps;
  j["eval_every"] = cfg.eval_every;
  j["eval_sequences"] = cfg.eval_sequences;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  return j;
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  return from_object(j);
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  return to_object(cfg).dump();
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json_text(buf.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override: expected KEY=VALUE, got \"" + assignment + "\"");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json j = to_object(cfg);
  if (!j.contains(key))
    throw std::invalid_argument("override: unknown field \"" + key + "\"");
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // bare words are strings
  j[key] = value;
  cfg = from_object(j);
}

void validate_config(const ExperimentConfig& cfg) {
  SiraConfig lc = cfg.model.layer;
  lc.d_in = cfg.model.d_model;
  lc.d_out = cfg.model.d_model;
  validate_layer_config(lc);
  if (cfg.model.d_model < 1) throw std::invalid_argument("config: d_model must be >= 1");
  if (cfg.model.train_dropout < 0.0 || cfg.model.train_dropout >= 1.0)
    throw std::invalid_argument("config: train_dropout must be in [0, 1)");
  if (cfg.seq_len < 1) throw std::invalid_argument("config: seq_len must be >= 1");
  if (cfg.num_tasks < 1) throw std::invalid_argument("config: num_tasks must be >= 1");
  if (cfg.task_rank < 1 || cfg.task_rank > cfg.model.d_model)
    throw std::invalid_argument("config: task_rank must be in [1, d_model]");
  if (cfg.task_noise < 0.0) throw std::invalid_argument("config: task_noise must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (cfg.lr <= 0.0) throw std::invalid_argument("config: lr must be > 0");
  if (cfg.eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
  if (cfg.eval_sequences < 1) throw std::invalid_argument("config: eval_sequences must be >= 1");
}

std::uint64_t config_digest(const ExperimentConfig& cfg) {
  json j = to_object(cfg);
  j.erase("steps");
  j.erase("out_dir");
  return fnv1a64_str(j.dump());
}

}  // namespace sira
