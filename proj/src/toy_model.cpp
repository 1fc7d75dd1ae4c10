// SPDX-License-Identifier: Apache-2.0
#include "sira/toy_model.hpp"

#include <cmath>
#include <stdexcept>

#include "sira/hash.hpp"
#include "sira/ops.hpp"

namespace sira {

const std::array<const char*, 4> kLayerNames{"q", "k", "v", "o"};

namespace {

void copy_cols(Matrix& dst, std::size_t begin, const Matrix& src) {
  for (std::size_t j = 0; j < src.cols; ++j)
    for (std::size_t i = 0; i < src.rows; ++i) dst.at(i, begin + j) = src.at(i, j);
}

Matrix tanh_map(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = std::tanh(m.data[i]);
  return out;
}

void check_sequences(const Matrix& inputs, std::size_t d, std::size_t seq_len) {
  if (inputs.rows != d)
    throw ShapeError("model: inputs " + shape_str(inputs) + " do not match d_model=" +
                     std::to_string(d));
  if (seq_len < 1 || inputs.cols == 0 || inputs.cols % seq_len != 0)
    throw std::invalid_argument("model: inputs must hold whole sequences of length " +
                                std::to_string(seq_len));
}

// Attention probabilities for one sequence: column s holds the weights with
// which token s attends over all positions.
Matrix attention_probs(const Matrix& q, const Matrix& k) {
  Matrix logits = matmul(transpose(k), q);
  logits *= 1.0 / std::sqrt(static_cast<double>(q.rows));
  return softmax_columns(logits);
}

}  // namespace

ToyModel init_toy_model(const ModelConfig& cfg, const RngState& rng) {
  if (cfg.d_model < 1) throw std::invalid_argument("model config: d_model must be >= 1");
  if (cfg.train_dropout < 0.0 || cfg.train_dropout >= 1.0)
    throw std::invalid_argument("model config: train_dropout must be in [0, 1)");

  ToyModel m;
  m.cfg = cfg;
  m.cfg.layer.d_in = cfg.d_model;
  m.cfg.layer.d_out = cfg.d_model;
  validate_layer_config(m.cfg.layer);

  const std::size_t d = cfg.d_model;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  RngState embed_rng = rng.split(20);
  m.embed = Matrix(d, d);
  for (double& v : m.embed.data) v = inv_sqrt_d * embed_rng.next_gaussian();
  m.head = Matrix::identity(d);

  // Frozen projections are shaped so attention is content-based and sharply
  // self-focused: each token mostly attends to itself, which gives the value
  // and output adapters a per-token pathway to the targets.
  Matrix w_q = Matrix::identity(d);
  w_q *= cfg.attention_sharpness;
  Matrix w_k = w_q;
  Matrix w_v = Matrix::identity(d);
  w_v *= cfg.value_path_scale;
  Matrix w_o = Matrix::identity(d);

  m.layers[0] = init_sira_layer(m.cfg.layer, std::move(w_q), rng.split(10));
  m.layers[1] = init_sira_layer(m.cfg.layer, std::move(w_k), rng.split(11));
  m.layers[2] = init_sira_layer(m.cfg.layer, std::move(w_v), rng.split(12));
  m.layers[3] = init_sira_layer(m.cfg.layer, std::move(w_o), rng.split(13));
  return m;
}

std::uint64_t frozen_checksum(const ToyModel& m) {
  std::uint64_t h = hash_matrix(m.embed);
  h = hash_matrix(m.head, h);
  for (const auto& layer : m.layers) h = hash_matrix(layer.frozen.w0, h);
  return h;
}

BatchResult model_forward(const ToyModel& m, const Matrix& inputs, const Matrix& targets,
                          std::size_t seq_len, RngState& rng, bool training,
                          ModelCache* cache) {
  const std::size_t d = m.cfg.d_model;
  check_sequences(inputs, d, seq_len);
  const std::size_t total = inputs.cols;
  const std::size_t batch = total / seq_len;
  const SiraConfig& lc = m.cfg.layer;
  const bool per_seq = lc.group == DispatchGroup::sequence;
  const std::size_t groups = per_seq ? batch : 1;
  const std::size_t group_cols = per_seq ? seq_len : total;

  const Matrix x = matmul(m.embed, inputs);

  BatchResult res;
  if (cache) {
    cache->x_embed = x;
    for (auto& per_layer : cache->layer) per_layer.resize(groups);
    cache->attn.clear();
    cache->batch = batch;
    cache->seq_len = seq_len;
    cache->training = training;
  }

  std::array<double, 4> aux_by_layer{};
  auto run_layer = [&](std::size_t li, const Matrix& src) -> Matrix {
    Matrix full(d, total);
    res.example_gate_means[li] = Matrix(m.layers[li].bank.size(), batch);
    res.accepted_per_expert[li].assign(m.layers[li].bank.size(), 0);
    for (std::size_t g = 0; g < groups; ++g) {
      const Matrix xg = col_slice(src, g * group_cols, group_cols);
      LayerCache* lcache = cache ? &cache->layer[li][g] : nullptr;
      LayerOutput lo = layer_forward(lc, m.layers[li], xg, rng, training, lcache);
      copy_cols(full, g * group_cols, lo.y);
      aux_by_layer[li] += lo.aux;
      res.entropy[li] += gate_entropy(lo.decision);
      for (std::size_t e = 0; e < lo.plan.per_expert_tokens.size(); ++e) {
        res.accepted[li] += lo.plan.per_expert_tokens[e].size();
        res.accepted_per_expert[li][e] += lo.plan.per_expert_tokens[e].size();
      }
      res.dropped[li] += lo.plan.dropped_pairs.size();
      // Mean pre-dropout probability per expert per sequence.
      const Matrix& probs = lo.decision.probs_pre_dropout;
      const std::size_t seqs_in_group = group_cols / seq_len;
      for (std::size_t bs = 0; bs < seqs_in_group; ++bs) {
        const std::size_t example = g * seqs_in_group + bs;
        for (std::size_t e = 0; e < probs.rows; ++e) {
          double mean = 0.0;
          for (std::size_t s = 0; s < seq_len; ++s)
            mean += probs.at(e, bs * seq_len + s);
          res.example_gate_means[li].at(e, example) = mean / static_cast<double>(seq_len);
        }
      }
    }
    res.entropy[li] /= static_cast<double>(groups);
    aux_by_layer[li] /= static_cast<double>(groups);
    return full;
  };

  Matrix q_out = run_layer(0, x);
  Matrix k_out = run_layer(1, x);
  Matrix v_out = run_layer(2, x);

  Matrix ctx(d, total);
  for (std::size_t b = 0; b < batch; ++b) {
    const Matrix qb = col_slice(q_out, b * seq_len, seq_len);
    const Matrix kb = col_slice(k_out, b * seq_len, seq_len);
    const Matrix vb = col_slice(v_out, b * seq_len, seq_len);
    Matrix attn = attention_probs(qb, kb);
    copy_cols(ctx, b * seq_len, matmul(vb, attn));
    if (cache) cache->attn.push_back(std::move(attn));
  }

  DropoutResult dropped_ctx = dropout(ctx, m.cfg.train_dropout, rng, training);
  Matrix o_out = run_layer(3, dropped_ctx.value);
  res.out = tanh_map(matmul(m.head, o_out));

  if (!targets.empty()) {
    if (!targets.same_shape(res.out))
      throw ShapeError("model_forward: targets " + shape_str(targets) +
                       " do not match output " + shape_str(res.out));
    double sum = 0.0;
    for (std::size_t i = 0; i < res.out.data.size(); ++i) {
      const double diff = res.out.data[i] - targets.data[i];
      sum += diff * diff;
    }
    res.mse = sum / static_cast<double>(res.out.data.size());
  }
  for (double a : aux_by_layer) res.aux += a;
  res.loss = res.mse + res.aux;

  if (cache) {
    cache->q_out = std::move(q_out);
    cache->k_out = std::move(k_out);
    cache->v_out = std::move(v_out);
    cache->ctx = std::move(dropped_ctx.value);
    cache->drop_mask = std::move(dropped_ctx.mask);
    cache->o_out = std::move(o_out);
    cache->out = res.out;
  }
  return res;
}

Matrix model_frozen_forward(const ToyModel& m, const Matrix& inputs, std::size_t seq_len) {
  const std::size_t d = m.cfg.d_model;
  check_sequences(inputs, d, seq_len);
  const std::size_t total = inputs.cols;
  const std::size_t batch = total / seq_len;

  const Matrix x = matmul(m.embed, inputs);
  const Matrix q_out = frozen_forward(m.layers[0].frozen, x);
  const Matrix k_out = frozen_forward(m.layers[1].frozen, x);
  const Matrix v_out = frozen_forward(m.layers[2].frozen, x);

  Matrix ctx(d, total);
  for (std::size_t b = 0; b < batch; ++b) {
    const Matrix qb = col_slice(q_out, b * seq_len, seq_len);
    const Matrix kb = col_slice(k_out, b * seq_len, seq_len);
    const Matrix vb = col_slice(v_out, b * seq_len, seq_len);
    copy_cols(ctx, b * seq_len, matmul(vb, attention_probs(qb, kb)));
  }
  const Matrix o_out = frozen_forward(m.layers[3].frozen, ctx);
  return tanh_map(matmul(m.head, o_out));
}

namespace {

void accumulate(LayerGrads& into, LayerGrads&& from) {
  if (into.expert_down.empty()) {
    into = std::move(from);
    return;
  }
  if (!from.gate_weight.empty()) into.gate_weight += from.gate_weight;
  for (std::size_t e = 0; e < into.expert_down.size(); ++e) {
    into.expert_down[e] += from.expert_down[e];
    into.expert_up[e] += from.expert_up[e];
  }
  // `input` stays per-group; callers consume it before accumulation.
}

}  // namespace

ModelGrads model_backward(const ToyModel& m, const ModelCache& cache, const Matrix& targets) {
  const std::size_t d = m.cfg.d_model;
  const std::size_t total = cache.out.cols;
  const std::size_t batch = cache.batch;
  const std::size_t seq_len = cache.seq_len;
  if (!targets.same_shape(cache.out))
    throw ShapeError("model_backward: targets " + shape_str(targets) +
                     " do not match cached output " + shape_str(cache.out));

  const SiraConfig& lc = m.cfg.layer;
  const bool per_seq = lc.group == DispatchGroup::sequence;
  const std::size_t groups = per_seq ? batch : 1;
  const std::size_t group_cols = per_seq ? seq_len : total;
  const double aux_scale = 1.0 / static_cast<double>(groups);

  // d(mse)/d(pre-tanh) with mse averaged over every output entry.
  Matrix g_pre(d, total);
  const double inv_n = 2.0 / static_cast<double>(cache.out.data.size());
  for (std::size_t i = 0; i < g_pre.data.size(); ++i) {
    const double out = cache.out.data[i];
    g_pre.data[i] = inv_n * (out - targets.data[i]) * (1.0 - out * out);
  }
  const Matrix g_o = matmul(transpose(m.head), g_pre);

  ModelGrads grads;
  auto backward_layer = [&](std::size_t li, const Matrix& upstream) -> Matrix {
    Matrix g_input(d, total);
    for (std::size_t g = 0; g < groups; ++g) {
      LayerGrads lg = layer_backward(lc, m.layers[li], cache.layer[li][g],
                                     col_slice(upstream, g * group_cols, group_cols),
                                     aux_scale);
      copy_cols(g_input, g * group_cols, lg.input);
      accumulate(grads.layer[li], std::move(lg));
    }
    return g_input;
  };

  const Matrix g_ctx_dropped = backward_layer(3, g_o);
  const Matrix g_ctx = hadamard(g_ctx_dropped, cache.drop_mask);

  Matrix g_q(d, total), g_k(d, total), g_v(d, total);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t b = 0; b < batch; ++b) {
    const Matrix gc = col_slice(g_ctx, b * seq_len, seq_len);
    const Matrix qb = col_slice(cache.q_out, b * seq_len, seq_len);
    const Matrix kb = col_slice(cache.k_out, b * seq_len, seq_len);
    const Matrix vb = col_slice(cache.v_out, b * seq_len, seq_len);
    const Matrix& attn = cache.attn[b];
    copy_cols(g_v, b * seq_len, matmul(gc, transpose(attn)));
    const Matrix g_attn = matmul(transpose(vb), gc);
    Matrix g_logits = softmax_backward_columns(attn, g_attn);
    g_logits *= inv_sqrt_d;
    copy_cols(g_q, b * seq_len, matmul(kb, g_logits));
    copy_cols(g_k, b * seq_len, matmul(qb, transpose(g_logits)));
  }

  backward_layer(0, g_q);
  backward_layer(1, g_k);
  backward_layer(2, g_v);
  return grads;
}

}  // namespace sira
