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

#ifndef VIBRE_TENSOR_HPP_
#define VIBRE_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vibre {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an API precondition (non-scalar loss, empty tape, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A class index or relation label outside the known label set.
class LabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A forward op produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient.
///
/// Copies share storage; use clone() for a deep copy. Parameters are leaf
/// tensors with requires_grad set; op outputs are interior nodes recorded on
/// the active Tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access; only for leaves (initialisation, optimiser steps).
  std::span<double> mutable_data() { return node_->data; }

  double item() const;
  double value(std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep copy of the data; the result is a fresh leaf without gradient.
  Tensor detach() const;
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Define-by-run recording of differentiable ops.
///
/// Constructing a Tape makes it the active tape of the calling thread until
/// it is destroyed; ops executed while no tape is active record nothing.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(const Tensor& output, std::function<void()> backward_rule);

  /// Seeds d(loss)/d(loss) = 1 and replays the recorded rules in reverse.
  /// Interior gradients are reset on every call; leaf gradients accumulate.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<detail::Node> output;
    std::function<void()> rule;
  };
  std::vector<Entry> entries_;
  Tape* previous_;
};

/// Suspends recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

/// backward(loss) on the active tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Ops. Each returns a new tensor and, when a tape is active and any input
// requires a gradient, records its backward rule.

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// [G x m x k] . [G x k x n] -> [G x m x n]; with transpose_b, b is [G x n x k].
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

/// x [n x c] + bias [c] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

/// Multiplies row r of x [n x c] by the constant weights[r].
Tensor scale_rows(const Tensor& x, std::span<const double> weights);

/// x . w + b for x [n x in], w [in x out], b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor square(const Tensor& x);
Tensor log(const Tensor& x);

/// max(x,0) + log1p(exp(-|x|)).
Tensor softplus(const Tensor& x);

/// tanh approximation of GELU.
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// [n x d] -> [n], summing each row.
Tensor sum_rows(const Tensor& x);

/// sum_i x_i * w_i with constant weights; returns a scalar.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

/// Normalises over the last axis with eps = 1e-5, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// Softmax over the last axis.
Tensor softmax(const Tensor& x);

/// Softmax over the last axis of scores [(B*H) x L x L] restricted to valid
/// keys. key_valid has B*L entries; masked keys receive probability exactly 0.
Tensor masked_softmax(const Tensor& scores, std::span<const unsigned char> key_valid,
                      std::size_t heads);

/// Mean over the batch of -log softmax(logits)[gold].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> gold);

/// Rows of table [V x d] selected by ids -> [n x d].
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

/// Rows of x [n x d] selected by index -> [k x d].
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// [n x p] | [n x q] -> [n x (p+q)]
Tensor concat_cols(const Tensor& a, const Tensor& b);

/// [(B*L) x d] -> [(B*H) x L x d/H]
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads);

/// [(B*H) x L x dh] -> [(B*L) x (H*dh)]
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);

Tensor reshape(const Tensor& x, Shape shape);

}  // namespace vibre

#endif  // VIBRE_TENSOR_HPP_
