// SPDX-License-Identifier: Apache-2.0
#include "sira/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "sira/hash.hpp"

namespace sira {

namespace {

constexpr char kMagic[4] = {'S', 'I', 'R', 'A'};
constexpr std::uint64_t kProbeSeed = 0xC0FFEE5EEDull;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(buf, bits);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[off_ + i])) << (8 * i);
    off_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[off_ + i])) << (8 * i);
    off_ += 8;
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }

  std::string str(std::size_t len) {
    need(len);
    std::string s = bytes_.substr(off_, len);
    off_ += len;
    return s;
  }

  bool done() const { return off_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (off_ + n > bytes_.size()) throw CheckpointError("checkpoint: truncated file");
  }
  std::string bytes_;
  std::size_t off_ = 0;
};

std::string tensor_payload(const Matrix& m) {
  std::string payload;
  payload.reserve(m.data.size() * 8);
  for (double d : m.data) put_f64(payload, d);
  return payload;
}

}  // namespace

std::uint64_t probe_digest(const ExperimentConfig& cfg, const ToyModel& model) {
  RngState probe_rng{kProbeSeed, 0};
  Matrix probe(cfg.model.d_model, cfg.seq_len);
  for (double& v : probe.data) v = probe_rng.next_gaussian();
  RngState unused{0, 0};
  const BatchResult r =
      model_forward(model, probe, Matrix(), cfg.seq_len, unused, false, nullptr);
  return hash_matrix(r.out);
}

void write_snapshot(const std::string& path, const Snapshot& s) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kCheckpointVersion);
  put_u64(buf, s.config_digest);
  put_u32(buf, static_cast<std::uint32_t>(s.config_echo.size()));
  buf.append(s.config_echo);
  put_u64(buf, s.rng_seed);
  put_u64(buf, s.rng_position);
  put_u64(buf, s.step);
  put_f64(buf, s.best_val);
  put_u64(buf, s.best_step);
  put_u64(buf, s.frozen);
  put_u64(buf, s.probe);
  put_u32(buf, static_cast<std::uint32_t>(s.tensors.size()));
  for (const auto& [name, tensor] : s.tensors) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    put_u32(buf, static_cast<std::uint32_t>(tensor.rows));
    put_u32(buf, static_cast<std::uint32_t>(tensor.cols));
    const std::string payload = tensor_payload(tensor);
    buf.append(payload);
    put_u64(buf, fnv1a64(payload.data(), payload.size()));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open \"" + path + "\" for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("checkpoint: short write to \"" + path + "\"");
}

Snapshot read_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open \"" + path + "\"");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));

  if (r.str(4) != std::string(kMagic, 4))
    throw CheckpointError("checkpoint: bad magic bytes in \"" + path + "\"");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");

  Snapshot s;
  s.config_digest = r.u64();
  s.config_echo = r.str(r.u32());
  s.rng_seed = r.u64();
  s.rng_position = r.u64();
  s.step = r.u64();
  s.best_val = r.f64();
  s.best_step = r.u64();
  s.frozen = r.u64();
  s.probe = r.u64();
  const std::uint32_t count = r.u32();
  s.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const std::size_t rows = r.u32();
    const std::size_t cols = r.u32();
    Matrix m(rows, cols);
    const std::string payload = r.str(rows * cols * 8);
    if (fnv1a64(payload.data(), payload.size()) != r.u64())
      throw CheckpointError("checkpoint: payload checksum mismatch in tensor \"" + name +
                            "\"");
    for (std::size_t j = 0; j < m.data.size(); ++j) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(
                    static_cast<unsigned char>(payload[j * 8 + b]))
                << (8 * b);
      std::memcpy(&m.data[j], &bits, sizeof(double));
    }
    s.tensors.emplace_back(name, std::move(m));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes in \"" + path + "\"");
  return s;
}

void save_checkpoint(const std::string& path, const ExperimentConfig& cfg,
                     const ToyModel& model, const TrainState& state) {
  Snapshot s;
  s.config_echo = config_to_json_text(cfg);
  s.config_digest = config_digest(cfg);
  s.rng_seed = state.train_rng.seed;
  s.rng_position = state.train_rng.position;
  s.step = state.step;
  s.best_val = state.best_val;
  s.best_step = state.best_step;
  s.frozen = frozen_checksum(model);
  s.probe = probe_digest(cfg, model);

  auto params = trainable_params(const_cast<ToyModel&>(model));
  for (const NamedParam& p : params) s.tensors.emplace_back(p.name, *p.tensor);
  for (std::size_t i = 0; i < params.size(); ++i)
    s.tensors.emplace_back("adam_m." + params[i].name, state.adam_m[i]);
  for (std::size_t i = 0; i < params.size(); ++i)
    s.tensors.emplace_back("adam_v." + params[i].name, state.adam_v[i]);
  write_snapshot(path, s);
}

namespace {

TrainState restore_from_snapshot(const Snapshot& s, const ExperimentConfig& cfg,
                                 ToyModel& model) {
  std::map<std::string, const Matrix*> by_name;
  for (const auto& [name, tensor] : s.tensors) by_name[name] = &tensor;

  auto fetch = [&](const std::string& name) -> const Matrix& {
    const auto it = by_name.find(name);
    if (it == by_name.end())
      throw CheckpointError("checkpoint: missing tensor \"" + name + "\"");
    return *it->second;
  };

  TrainState state;
  auto params = trainable_params(model);
  for (const NamedParam& p : params) {
    const Matrix& m = fetch(p.name);
    if (!m.same_shape(*p.tensor))
      throw CheckpointError("checkpoint: tensor \"" + p.name + "\" is " + shape_str(m) +
                            ", expected " + shape_str(*p.tensor));
    *p.tensor = m;
  }
  for (const NamedParam& p : params) state.adam_m.push_back(fetch("adam_m." + p.name));
  for (const NamedParam& p : params) state.adam_v.push_back(fetch("adam_v." + p.name));
  state.step = s.step;
  state.train_rng = RngState{s.rng_seed, s.rng_position};
  state.best_val = s.best_val;
  state.best_step = s.best_step;

  if (frozen_checksum(model) != s.frozen)
    throw CheckpointError("checkpoint: frozen weights disagree with the stored checksum");
  const std::uint64_t probe = probe_digest(cfg, model);
  if (probe != s.probe)
    throw CheckpointError("checkpoint: probe forward pass diverges from the stored digest");
  return state;
}

}  // namespace

TrainState load_checkpoint(const std::string& path, const ExperimentConfig& cfg,
                           ToyModel& model) {
  const Snapshot s = read_snapshot(path);
  const std::uint64_t expected = config_digest(cfg);
  if (s.config_digest != expected)
    throw CheckpointError("checkpoint: config digest mismatch (stored " +
                          std::to_string(s.config_digest) + ", current " +
                          std::to_string(expected) + ")");
  return restore_from_snapshot(s, cfg, model);
}

RoundtripReport verify_checkpoint(const std::string& path) {
  RoundtripReport report;
  try {
    const Snapshot s = read_snapshot(path);
    const ExperimentConfig cfg = config_from_json_text(s.config_echo);
    if (config_digest(cfg) != s.config_digest) {
      report.detail = "embedded config does not match the stored digest";
      return report;
    }
    ToyModel model = init_toy_model(cfg.model, model_stream(cfg.seed));
    restore_from_snapshot(s, cfg, model);
    report.stored_probe = s.probe;
    report.recomputed_probe = probe_digest(cfg, model);
    report.ok = true;
    report.detail = "exact match";
  } catch (const std::exception& e) {
    report.ok = false;
    report.detail = e.what();
  }
  return report;
}

}  // namespace sira
