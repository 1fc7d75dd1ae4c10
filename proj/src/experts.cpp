// SPDX-License-Identifier: Apache-2.0
#include "sira/experts.hpp"

#include <stdexcept>

namespace sira {

LoraExpert init_expert(std::size_t d_in, std::size_t d_out, std::size_t r,
                       RngState& rng, double init_std, double scale) {
  if (d_in == 0 || d_out == 0 || r == 0)
    throw std::invalid_argument("init_expert: dimensions and rank must be >= 1");
  LoraExpert e;
  e.down = Matrix(r, d_in);
  for (double& v : e.down.data) v = init_std * rng.next_gaussian();
  e.up = Matrix(d_out, r);  // zero, so the fresh delta is exactly zero
  e.scale = scale;
  return e;
}

ExpertBank init_bank(std::size_t count, std::size_t d_in, std::size_t d_out,
                     std::size_t r, const RngState& rng, double init_std,
                     double scale) {
  ExpertBank bank;
  bank.experts.reserve(count);
  for (std::size_t e = 0; e < count; ++e) {
    RngState stream = rng.split(e);
    bank.experts.push_back(init_expert(d_in, d_out, r, stream, init_std, scale));
  }
  return bank;
}

Matrix expert_forward(const LoraExpert& e, const Matrix& x) {
  Matrix y = matmul(e.up, matmul(e.down, x));
  y *= e.scale;
  return y;
}

Matrix frozen_forward(const FrozenProjection& p, const Matrix& x) {
  return matmul(p.w0, x);
}

ExpertGrads expert_backward(const LoraExpert& e, const Matrix& x, const Matrix& upstream) {
  ExpertGrads g;
  const Matrix hidden = matmul(e.down, x);            // r x S
  const Matrix lifted = matmul(transpose(e.up), upstream);  // r x S
  g.up = matmul(upstream, transpose(hidden));
  g.up *= e.scale;
  g.down = matmul(lifted, transpose(x));
  g.down *= e.scale;
  g.input = matmul(transpose(e.down), lifted);
  g.input *= e.scale;
  return g;
}

}  // namespace sira
