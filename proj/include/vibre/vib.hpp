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

#ifndef VIBRE_VIB_HPP_
#define VIBRE_VIB_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vibre/rng.hpp"
#include "vibre/tensor.hpp"

namespace vibre {

/// Per-token binary flags; 1 marks a token inside the subject or object span.
class EntityMask {
 public:
  EntityMask() = default;
  explicit EntityMask(std::vector<std::uint8_t> bits);

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  std::size_t count() const;
  std::span<const std::uint8_t> bits() const { return bits_; }

  /// Concatenation of per-sequence masks in batch order.
  static EntityMask concat(std::span<const EntityMask> masks);

  friend bool operator==(const EntityMask&, const EntityMask&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Two single-layer perceptrons producing mu and raw sigma, plus the
/// blending factor. One set is shared by subject and object tokens.
struct VibParams {
  Tensor w_mu;     // [d x d]
  Tensor b_mu;     // [d]
  Tensor w_sigma;  // [d x d]
  Tensor b_sigma;  // [d]
  double beta = 0.5;

  static VibParams init(std::size_t d, double beta, Rng& rng);
  std::size_t width() const { return w_mu.dim(0); }
  std::vector<Tensor> parameters() const { return {w_mu, b_mu, w_sigma, b_sigma}; }
};

struct GaussianCode {
  Tensor mu;
  Tensor sigma;
  Tensor z;
};

/// mu = x.W_mu + b_mu, sigma = softplus(x.W_sigma + b_sigma), row per token.
GaussianCode encode_gaussian(const Tensor& x, const VibParams& params);

/// z = mu + eps * sigma. eps is treated as a constant.
Tensor sample_z(const Tensor& mu, const Tensor& sigma, const Tensor& eps);

/// Standard normal noise of the given shape.
Tensor draw_noise(const Shape& shape, Rng& rng);

/// Per-row KL(N(mu, sigma^2) || N(0, I)) = sum_d 0.5 (mu^2 + sigma^2 - 1 - ln sigma^2).
/// Throws DomainError if any sigma is not strictly positive.
Tensor kl_to_standard_normal(const Tensor& mu, const Tensor& sigma);

/// Mean KL over the entity rows of each sequence, averaged over the batch.
/// mu and sigma hold batch sequences of equal length stacked row-wise; mask
/// covers all rows. A sequence without entity rows contributes 0.
Tensor vib_loss(const Tensor& mu, const Tensor& sigma, const EntityMask& mask,
                std::size_t batch = 1);

/// x' = x (1 - M) + x M (1 - beta) + z M beta, row-wise over tokens.
/// Rows with M = 0 are returned bit-identical.
Tensor blend(const Tensor& x, const Tensor& z, const EntityMask& mask, double beta);

}  // namespace vibre

#endif  // VIBRE_VIB_HPP_
