// Copyright 2026 The vibre Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "vibre/vib.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vibre {

EntityMask::EntityMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t EntityMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

EntityMask EntityMask::concat(std::span<const EntityMask> masks) {
  std::vector<std::uint8_t> bits;
  for (const auto& m : masks) bits.insert(bits.end(), m.bits_.begin(), m.bits_.end());
  return EntityMask(std::move(bits));
}

namespace {

void check_beta(double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw DomainError("blending factor beta must lie in [0, 1], got " + std::to_string(beta));
  }
}

Tensor gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor({rows, cols}, std::move(v), true);
}

}  // namespace

VibParams VibParams::init(std::size_t d, double beta, Rng& rng) {
  check_beta(beta);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  VibParams p;
  p.w_mu = gaussian_matrix(d, d, scale, rng);
  p.b_mu = Tensor::zeros({d}, true);
  p.w_sigma = gaussian_matrix(d, d, scale, rng);
  p.b_sigma = Tensor::zeros({d}, true);
  p.beta = beta;
  return p;
}

GaussianCode encode_gaussian(const Tensor& x, const VibParams& params) {
  if (x.rank() != 2 || x.dim(1) != params.width()) {
    throw DimensionError("encode_gaussian: embeddings " + shape_string(x.shape()) +
                         " vs VIB width " + std::to_string(params.width()));
  }
  GaussianCode code;
  code.mu = linear(x, params.w_mu, params.b_mu);
  code.sigma = softplus(linear(x, params.w_sigma, params.b_sigma));
  return code;
}

Tensor sample_z(const Tensor& mu, const Tensor& sigma, const Tensor& eps) {
  if (eps.requires_grad()) throw ContractError("sample_z: noise must not require a gradient");
  return add(mu, mul(eps, sigma));
}

Tensor draw_noise(const Shape& shape, Rng& rng) {
  Tensor eps = Tensor::zeros(shape);
  for (auto& v : eps.mutable_data()) v = rng.normal();
  return eps;
}

Tensor kl_to_standard_normal(const Tensor& mu, const Tensor& sigma) {
  if (mu.shape() != sigma.shape()) {
    throw DimensionError("kl_to_standard_normal: mu " + shape_string(mu.shape()) + " vs sigma " +
                         shape_string(sigma.shape()));
  }
  for (double s : sigma.data()) {
    if (!(s > 0.0)) {
      throw DomainError("kl_to_standard_normal: sigma must be positive, got " + std::to_string(s));
    }
  }
  // ln sigma^2 = 2 ln sigma keeps small sigma away from underflow.
  Tensor inner = sub(add(square(mu), add_scalar(square(sigma), -1.0)), scale(log(sigma), 2.0));
  return scale(sum_rows(inner), 0.5);
}

Tensor vib_loss(const Tensor& mu, const Tensor& sigma, const EntityMask& mask, std::size_t batch) {
  const std::size_t rows = mu.rank() == 2 ? mu.dim(0) : 0;
  if (rows != mask.size()) {
    throw DimensionError("vib_loss: mask of length " + std::to_string(mask.size()) + " for " +
                         shape_string(mu.shape()));
  }
  if (batch == 0 || rows % batch != 0) {
    throw DimensionError("vib_loss: " + std::to_string(rows) + " rows do not split into " +
                         std::to_string(batch) + " sequences");
  }
  const Tensor kl = kl_to_standard_normal(mu, sigma);
  const std::size_t len = rows / batch;
  std::vector<double> weights(rows, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t entities = 0;
    for (std::size_t t = 0; t < len; ++t) entities += mask[b * len + t];
    if (entities == 0) continue;
    const double w = 1.0 / (static_cast<double>(entities) * static_cast<double>(batch));
    for (std::size_t t = 0; t < len; ++t) {
      if (mask[b * len + t]) weights[b * len + t] = w;
    }
  }
  return weighted_sum(kl, weights);
}

Tensor blend(const Tensor& x, const Tensor& z, const EntityMask& mask, double beta) {
  check_beta(beta);
  if (x.shape() != z.shape()) {
    throw DimensionError("blend: x " + shape_string(x.shape()) + " vs z " + shape_string(z.shape()));
  }
  if (x.rank() != 2 || x.dim(0) != mask.size()) {
    throw DimensionError("blend: mask of length " + std::to_string(mask.size()) + " for " +
                         shape_string(x.shape()));
  }
  const std::size_t d = x.dim(1);
  const auto xv = x.data();
  const auto zv = z.data();
  std::vector<double> out(xv.begin(), xv.end());
  if (beta != 0.0) {
    for (std::size_t t = 0; t < mask.size(); ++t) {
      if (!mask[t]) continue;
      for (std::size_t c = 0; c < d; ++c) out[t * d + c] = (1.0 - beta) * xv[t * d + c] + beta * zv[t * d + c];
    }
  }
  Tape* tape = Tape::current();
  const bool track = tape != nullptr && (x.requires_grad() || z.requires_grad());
  Tensor result(x.shape(), std::move(out), track);
  if (track) {
    result.node()->leaf = false;
    auto X = x.node(), Z = z.node(), O = result.node();
    const EntityMask m = mask;
    tape->record(result, [X, Z, O, m, beta, d] {
      for (std::size_t t = 0; t < m.size(); ++t) {
        const double keep = m[t] ? 1.0 - beta : 1.0;
        const double take = m[t] ? beta : 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double g = O->grad[t * d + c];
          if (X->requires_grad) {
            X->ensure_grad();
            X->grad[t * d + c] += keep * g;
          }
          if (Z->requires_grad && take != 0.0) {
            Z->ensure_grad();
            Z->grad[t * d + c] += take * g;
          }
        }
      }
    });
  }
  return result;
}

}  // namespace vibre
