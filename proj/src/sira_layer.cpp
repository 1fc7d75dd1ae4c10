// SPDX-License-Identifier: Apache-2.0
#include "sira/sira_layer.hpp"

#include <stdexcept>

namespace sira {

std::string mode_to_string(LayerMode m) {
  switch (m) {
    case LayerMode::sira: return "sira";
    case LayerMode::dense_lora: return "dense_lora";
    case LayerMode::full_moe: return "full_moe";
    case LayerMode::random_expert: return "random_expert";
    case LayerMode::static_routing: return "static_routing";
  }
  throw std::invalid_argument("mode_to_string: unknown mode");
}

LayerMode mode_from_string(const std::string& s) {
  if (s == "sira") return LayerMode::sira;
  if (s == "dense_lora") return LayerMode::dense_lora;
  if (s == "full_moe") return LayerMode::full_moe;
  if (s == "random_expert") return LayerMode::random_expert;
  if (s == "static_routing") return LayerMode::static_routing;
  throw std::invalid_argument("unknown layer mode: \"" + s + "\"");
}

std::string group_to_string(DispatchGroup g) {
  return g == DispatchGroup::sequence ? "sequence" : "batch";
}

DispatchGroup group_from_string(const std::string& s) {
  if (s == "sequence") return DispatchGroup::sequence;
  if (s == "batch") return DispatchGroup::batch;
  throw std::invalid_argument("unknown dispatch group: \"" + s + "\"");
}

void validate_layer_config(const SiraConfig& cfg) {
  if (cfg.d_in < 1) throw std::invalid_argument("layer config: d_in must be >= 1");
  if (cfg.d_out < 1) throw std::invalid_argument("layer config: d_out must be >= 1");
  if (cfg.rank < 1) throw std::invalid_argument("layer config: rank must be >= 1");
  if (cfg.num_experts < 1)
    throw std::invalid_argument("layer config: num_experts must be >= 1");
  if (cfg.top_k < 1 || cfg.top_k > cfg.num_experts)
    throw std::invalid_argument("layer config: top_k must satisfy 1 <= top_k <= num_experts");
  if (cfg.capacity < 1) throw std::invalid_argument("layer config: capacity must be >= 1");
  if (cfg.expert_dropout_rate < 0.0 || cfg.expert_dropout_rate >= 1.0)
    throw std::invalid_argument("layer config: expert_dropout_rate must be in [0, 1)");
  if (cfg.aux_weight < 0.0)
    throw std::invalid_argument("layer config: aux_weight must be >= 0");
  if (cfg.init_std < 0.0)
    throw std::invalid_argument("layer config: init_std must be >= 0");
  if (cfg.expert_scale <= 0.0)
    throw std::invalid_argument("layer config: expert_scale must be > 0");
}

std::size_t effective_experts(const SiraConfig& cfg) {
  return cfg.mode == LayerMode::dense_lora ? 1 : cfg.num_experts;
}

bool mode_has_gate(LayerMode m) {
  return m == LayerMode::sira || m == LayerMode::full_moe;
}

SiraLayerParams init_sira_layer(const SiraConfig& cfg, Matrix frozen_w0,
                                const RngState& rng) {
  validate_layer_config(cfg);
  if (frozen_w0.rows != cfg.d_out || frozen_w0.cols != cfg.d_in)
    throw ShapeError("init_sira_layer: frozen projection is " + shape_str(frozen_w0) +
                     ", expected " + std::to_string(cfg.d_out) + "x" +
                     std::to_string(cfg.d_in));
  SiraLayerParams p;
  p.frozen.w0 = std::move(frozen_w0);
  // Split streams so expert e has identical weights regardless of mode and
  // of whether a gate exists; the mode-collapse equivalences rely on it.
  p.bank = init_bank(effective_experts(cfg), cfg.d_in, cfg.d_out, cfg.rank,
                     rng.split(1), cfg.init_std, cfg.expert_scale);
  if (mode_has_gate(cfg.mode)) {
    RngState gate_rng = rng.split(2);
    p.gate = init_gate(cfg.d_in, cfg.num_experts, gate_rng, cfg.init_std);
  }
  return p;
}

namespace {

// Uniform pre-dropout probabilities for the modes without a learned gate;
// keeps entropy reporting meaningful (no information = max entropy).
Matrix uniform_probs(std::size_t num_experts, std::size_t tokens) {
  return Matrix(num_experts, tokens, 1.0 / static_cast<double>(num_experts));
}

}  // namespace

LayerOutput layer_forward(const SiraConfig& cfg, const SiraLayerParams& params,
                          const Matrix& x, RngState& rng, bool training,
                          LayerCache* cache) {
  validate_layer_config(cfg);
  if (x.rows != cfg.d_in)
    throw ShapeError("layer_forward: input " + shape_str(x) + " does not match d_in=" +
                     std::to_string(cfg.d_in));
  if (x.cols == 0) throw std::invalid_argument("layer_forward: empty token group");

  const std::size_t tokens = x.cols;
  const std::size_t bank_size = params.bank.size();

  LayerOutput out;
  out.y = frozen_forward(params.frozen, x);
  std::vector<LayerCache::Accepted> accepted;
  std::size_t random_choice = 0;

  switch (cfg.mode) {
    case LayerMode::sira: {
      out.decision = gate_forward(params.gate, x, cfg.top_k, cfg.expert_dropout_rate,
                                  rng, training);
      const std::size_t cap =
          (training || cfg.capacity_at_inference) ? cfg.capacity : tokens;
      out.plan = build_plan(out.decision, cap);
      for (std::size_t e = 0; e < bank_size; ++e) {
        for (const Routing& r : out.plan.per_expert_tokens[e]) {
          Matrix eo = expert_forward(params.bank.experts[e], x.col(r.token));
          out.y.add_col(r.token, eo, r.gate);
          accepted.push_back({e, r.token, r.gate, std::move(eo)});
        }
      }
      out.aux = cfg.aux_weight * aux_loss(out.plan, mean_gate_per_expert(out.decision));
      break;
    }
    case LayerMode::dense_lora: {
      const Matrix delta = expert_forward(params.bank.experts[0], x);
      out.y += delta;
      out.decision.probs_pre_dropout = Matrix(1, tokens, 1.0);
      out.decision.probs_post_dropout = Matrix(1, tokens, 1.0);
      out.decision.dropout_mask = Matrix(1, tokens, 1.0);
      out.decision.gate_values = Matrix(1, tokens, 1.0);
      out.decision.selected.assign(tokens, {0});
      out.decision.top_k = 1;
      out.plan = build_plan(out.decision, tokens);
      for (std::size_t s = 0; s < tokens; ++s)
        accepted.push_back({0, s, 1.0, delta.col(s)});
      break;
    }
    case LayerMode::full_moe: {
      // Soft mixture: every expert contributes with its softmax probability.
      out.decision = gate_forward(params.gate, x, bank_size, 0.0, rng, false);
      out.plan = build_plan(out.decision, tokens);
      for (std::size_t e = 0; e < bank_size; ++e) {
        const Matrix eo = expert_forward(params.bank.experts[e], x);
        for (std::size_t s = 0; s < tokens; ++s) {
          const double w = out.decision.gate_values.at(e, s);
          out.y.add_col(s, eo.col(s), w);
          accepted.push_back({e, s, w, eo.col(s)});
        }
      }
      break;
    }
    case LayerMode::random_expert: {
      out.decision.probs_pre_dropout = uniform_probs(bank_size, tokens);
      out.decision.dropout_mask = Matrix(bank_size, tokens, 1.0);
      out.decision.gate_values = Matrix(bank_size, tokens);
      if (training) {
        // One expert carries the whole forward pass, full weight.
        random_choice = static_cast<std::size_t>(rng.next_below(bank_size));
        out.decision.top_k = 1;
        out.decision.selected.assign(tokens, {random_choice});
        for (std::size_t s = 0; s < tokens; ++s)
          out.decision.gate_values.at(random_choice, s) = 1.0;
        out.decision.probs_post_dropout = out.decision.gate_values;
        out.plan = build_plan(out.decision, tokens);
        const Matrix eo = expert_forward(params.bank.experts[random_choice], x);
        out.y += eo;
        for (std::size_t s = 0; s < tokens; ++s)
          accepted.push_back({random_choice, s, 1.0, eo.col(s)});
      } else {
        // Inference averages every expert's delta.
        const double w = 1.0 / static_cast<double>(bank_size);
        out.decision.top_k = bank_size;
        std::vector<std::size_t> all(bank_size);
        for (std::size_t e = 0; e < bank_size; ++e) all[e] = e;
        out.decision.selected.assign(tokens, all);
        out.decision.gate_values = Matrix(bank_size, tokens, w);
        out.decision.probs_post_dropout = out.decision.gate_values;
        out.plan = build_plan(out.decision, tokens);
        for (std::size_t e = 0; e < bank_size; ++e) {
          const Matrix eo = expert_forward(params.bank.experts[e], x);
          for (std::size_t s = 0; s < tokens; ++s) {
            out.y.add_col(s, eo.col(s), w);
            accepted.push_back({e, s, w, eo.col(s)});
          }
        }
      }
      break;
    }
    case LayerMode::static_routing: {
      // Routing fixed by a hash of the token position; uniform gate values.
      const std::size_t k = std::min(cfg.top_k, bank_size);
      const double w = 1.0 / static_cast<double>(k);
      out.decision.probs_pre_dropout = uniform_probs(bank_size, tokens);
      out.decision.dropout_mask = Matrix(bank_size, tokens, 1.0);
      out.decision.gate_values = Matrix(bank_size, tokens);
      out.decision.top_k = k;
      out.decision.selected.resize(tokens);
      for (std::size_t s = 0; s < tokens; ++s) {
        const std::size_t start =
            static_cast<std::size_t>(mix64(static_cast<std::uint64_t>(s) + 1) %
                                     static_cast<std::uint64_t>(bank_size));
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t e = (start + j) % bank_size;
          out.decision.selected[s].push_back(e);
          out.decision.gate_values.at(e, s) = w;
        }
      }
      out.decision.probs_post_dropout = out.decision.gate_values;
      const std::size_t cap =
          (training || cfg.capacity_at_inference) ? cfg.capacity : tokens;
      out.plan = build_plan(out.decision, cap);
      for (std::size_t e = 0; e < bank_size; ++e) {
        for (const Routing& r : out.plan.per_expert_tokens[e]) {
          Matrix eo = expert_forward(params.bank.experts[e], x.col(r.token));
          out.y.add_col(r.token, eo, r.gate);
          accepted.push_back({e, r.token, r.gate, std::move(eo)});
        }
      }
      break;
    }
  }

  if (cache) {
    cache->x = x;
    cache->decision = out.decision;
    cache->plan = out.plan;
    cache->accepted = std::move(accepted);
    cache->random_choice = random_choice;
    cache->training = training;
  }
  return out;
}

LayerGrads layer_backward(const SiraConfig& cfg, const SiraLayerParams& params,
                          const LayerCache& cache, const Matrix& upstream,
                          double aux_scale) {
  const Matrix& x = cache.x;
  if (upstream.rows != cfg.d_out || upstream.cols != x.cols)
    throw ShapeError("layer_backward: upstream " + shape_str(upstream) +
                     " does not match cached forward of " + shape_str(x));

  const std::size_t bank_size = params.bank.size();
  LayerGrads g;
  g.input = matmul(transpose(params.frozen.w0), upstream);
  g.expert_down.reserve(bank_size);
  g.expert_up.reserve(bank_size);
  for (std::size_t e = 0; e < bank_size; ++e) {
    g.expert_down.emplace_back(cfg.rank, cfg.d_in);
    g.expert_up.emplace_back(cfg.d_out, cfg.rank);
  }

  const bool gated = mode_has_gate(cfg.mode);
  Matrix upstream_gate;
  if (gated) upstream_gate = Matrix(bank_size, x.cols);

  for (const auto& a : cache.accepted) {
    const Matrix up_col = upstream.col(a.token);
    if (gated) upstream_gate.at(a.expert, a.token) += dot(up_col, a.expert_out);
    if (a.gate != 0.0) {
      Matrix scaled = up_col;
      scaled *= a.gate;
      ExpertGrads eg = expert_backward(params.bank.experts[a.expert], x.col(a.token), scaled);
      g.expert_down[a.expert] += eg.down;
      g.expert_up[a.expert] += eg.up;
      g.input.add_col(a.token, eg.input);
    }
  }

  if (gated) {
    Matrix upstream_post;
    if (cfg.mode == LayerMode::sira && aux_scale != 0.0 && cfg.aux_weight != 0.0) {
      // d(aux)/d(post-dropout prob) is constant per expert: the demand counts
      // are not differentiated through.
      upstream_post = Matrix(bank_size, x.cols);
      const double s_count = static_cast<double>(cache.plan.group_size);
      const double common =
          aux_scale * cfg.aux_weight /
          (static_cast<double>(bank_size) * s_count * s_count);
      for (std::size_t e = 0; e < bank_size; ++e) {
        const double coef = common * static_cast<double>(cache.plan.routed_counts[e]);
        for (std::size_t s = 0; s < x.cols; ++s) upstream_post.at(e, s) = coef;
      }
    }
    GateGrads gg = gate_backward(params.gate, cache.decision, x, upstream_gate,
                                 upstream_post);
    g.gate_weight = std::move(gg.weight);
    g.input += gg.input;
  }
  return g;
}

std::size_t count_trainable_params(const SiraConfig& cfg) {
  const std::size_t per_expert = cfg.rank * (cfg.d_in + cfg.d_out);
  switch (cfg.mode) {
    case LayerMode::dense_lora:
      return per_expert;
    case LayerMode::sira:
    case LayerMode::full_moe:
      return cfg.num_experts * per_expert + cfg.d_in * cfg.num_experts;
    case LayerMode::random_expert:
    case LayerMode::static_routing:
      return cfg.num_experts * per_expert;
  }
  throw std::invalid_argument("count_trainable_params: unknown mode");
}

}  // namespace sira
