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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>

#include "vibre/tensor.hpp"

namespace vibre {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;
using NodePtr = std::shared_ptr<detail::Node>;

void check_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_output(Shape shape, std::vector<double> data, bool track, const char* op) {
  check_finite(data, op);
  Tensor out(std::move(shape), std::move(data), track);
  out.node()->leaf = !track;
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

double* grad_of(const NodePtr& n) {
  n->ensure_grad();
  return n->grad.data();
}

// Elementwise unary op with derivative computed from (x, y).
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto xs = x.data();
  std::vector<double> y(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) y[i] = fwd(xs[i]);
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), std::move(y), track, name);
  if (track) {
    NodePtr X = x.node(), O = out.node();
    Tape::current()->record(out, [X, O, deriv] {
      double* gx = grad_of(X);
      for (std::size_t i = 0; i < O->data.size(); ++i) {
        gx[i] += O->grad[i] * deriv(X->data[i], O->data[i]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) +
                         " . " + shape_string(b.shape()));
  }
  std::vector<double> y(m * n);
  MutMap(y.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  const bool track = tracking({&a, &b});
  Tensor out = make_output({m, n}, std::move(y), track, "matmul");
  if (track) {
    NodePtr A = a.node(), B = b.node(), O = out.node();
    Tape::current()->record(out, [A, B, O, m, k, n] {
      ConstMap g(O->grad.data(), m, n);
      if (A->requires_grad) {
        MutMap(grad_of(A), m, k).noalias() += g * ConstMap(B->data.data(), k, n).transpose();
      }
      if (B->requires_grad) {
        MutMap(grad_of(B), k, n).noalias() += ConstMap(A->data.data(), m, k).transpose() * g;
      }
    });
  }
  return out;
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const std::size_t groups = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != groups || bk != k) {
    throw DimensionError("batched_matmul: incompatible " + shape_string(a.shape()) + " . " +
                         shape_string(b.shape()) + (transpose_b ? "^T" : ""));
  }
  std::vector<double> y(groups * m * n);
  for (std::size_t g = 0; g < groups; ++g) {
    ConstMap ag(a.data().data() + g * m * k, m, k);
    MutMap yg(y.data() + g * m * n, m, n);
    if (transpose_b) {
      yg.noalias() = ag * ConstMap(b.data().data() + g * n * k, n, k).transpose();
    } else {
      yg.noalias() = ag * ConstMap(b.data().data() + g * k * n, k, n);
    }
  }
  const bool track = tracking({&a, &b});
  Tensor out = make_output({groups, m, n}, std::move(y), track, "batched_matmul");
  if (track) {
    NodePtr A = a.node(), B = b.node(), O = out.node();
    Tape::current()->record(out, [A, B, O, groups, m, k, n, transpose_b] {
      for (std::size_t g = 0; g < groups; ++g) {
        ConstMap go(O->grad.data() + g * m * n, m, n);
        ConstMap ag(A->data.data() + g * m * k, m, k);
        if (transpose_b) {
          ConstMap bg(B->data.data() + g * n * k, n, k);
          if (A->requires_grad) MutMap(grad_of(A) + g * m * k, m, k).noalias() += go * bg;
          if (B->requires_grad) MutMap(grad_of(B) + g * n * k, n, k).noalias() += go.transpose() * ag;
        } else {
          ConstMap bg(B->data.data() + g * k * n, k, n);
          if (A->requires_grad) MutMap(grad_of(A) + g * m * k, m, k).noalias() += go * bg.transpose();
          if (B->requires_grad) MutMap(grad_of(B) + g * k * n, k, n).noalias() += ag.transpose() * go;
        }
      }
    });
  }
  return out;
}

namespace {

enum class Binary { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  require_same_shape(a, b, name);
  const auto as = a.data(), bs = b.data();
  std::vector<double> y(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) {
    switch (kind) {
      case Binary::kAdd: y[i] = as[i] + bs[i]; break;
      case Binary::kSub: y[i] = as[i] - bs[i]; break;
      case Binary::kMul: y[i] = as[i] * bs[i]; break;
    }
  }
  const bool track = tracking({&a, &b});
  Tensor out = make_output(a.shape(), std::move(y), track, name);
  if (track) {
    NodePtr A = a.node(), B = b.node(), O = out.node();
    Tape::current()->record(out, [A, B, O, kind] {
      const std::size_t n = O->data.size();
      const double* g = O->grad.data();
      if (A->requires_grad) {
        double* ga = grad_of(A);
        for (std::size_t i = 0; i < n; ++i) ga[i] += kind == Binary::kMul ? g[i] * B->data[i] : g[i];
      }
      if (B->requires_grad) {
        double* gb = grad_of(B);
        for (std::size_t i = 0; i < n; ++i) {
          gb[i] += kind == Binary::kMul ? g[i] * A->data[i] : (kind == Binary::kSub ? -g[i] : g[i]);
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul, "mul"); }

Tensor scale(const Tensor& a, double s) {
  return unary(a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (bias.numel() != c) {
    throw DimensionError("add_row_bias: bias " + shape_string(bias.shape()) + " vs rows of " +
                         shape_string(x.shape()));
  }
  std::vector<double> y(x.data().begin(), x.data().end());
  const auto bs = bias.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] += bs[j];
  }
  const bool track = tracking({&x, &bias});
  Tensor out = make_output(x.shape(), std::move(y), track, "add_row_bias");
  if (track) {
    NodePtr X = x.node(), B = bias.node(), O = out.node();
    Tape::current()->record(out, [X, B, O, n, c] {
      const double* g = O->grad.data();
      if (X->requires_grad) {
        double* gx = grad_of(X);
        for (std::size_t i = 0; i < n * c; ++i) gx[i] += g[i];
      }
      if (B->requires_grad) {
        double* gb = grad_of(B);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
        }
      }
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, std::span<const double> weights) {
  require_rank(x, 2, "scale_rows");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (weights.size() != n) {
    throw DimensionError("scale_rows: " + std::to_string(weights.size()) + " weights for " +
                         shape_string(x.shape()));
  }
  std::vector<double> y(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] *= weights[r];
  }
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), std::move(y), track, "scale_rows");
  if (track) {
    NodePtr X = x.node(), O = out.node();
    std::vector<double> w(weights.begin(), weights.end());
    Tape::current()->record(out, [X, O, c, w = std::move(w)] {
      double* gx = grad_of(X);
      for (std::size_t r = 0; r < w.size(); ++r) {
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += O->grad[r * c + j] * w[r];
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row_bias(matmul(x, w), b);
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; },
               [](double v, double) { return 2.0 * v; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(x, "log", [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, "softplus",
      [](double v) {
        const double y = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
        return std::max(y, std::numeric_limits<double>::denorm_min());
      },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(c * (v + k * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
      });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const bool track = tracking({&x});
  Tensor out = make_output({1}, {s}, track, "sum");
  if (track) {
    NodePtr X = x.node(), O = out.node();
    Tape::current()->record(out, [X, O] {
      double* gx = grad_of(X);
      for (std::size_t i = 0; i < X->data.size(); ++i) gx[i] += O->grad[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_rows(const Tensor& x) {
  require_rank(x, 2, "sum_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> y(n, 0.0);
  const auto xs = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) y[r] += xs[r * d + j];
  }
  const bool track = tracking({&x});
  Tensor out = make_output({n}, std::move(y), track, "sum_rows");
  if (track) {
    NodePtr X = x.node(), O = out.node();
    Tape::current()->record(out, [X, O, n, d] {
      double* gx = grad_of(X);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += O->grad[r];
      }
    });
  }
  return out;
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                         shape_string(x.shape()));
  }
  double s = 0.0;
  const auto xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) s += xs[i] * weights[i];
  const bool track = tracking({&x});
  Tensor out = make_output({1}, {s}, track, "weighted_sum");
  if (track) {
    NodePtr X = x.node(), O = out.node();
    std::vector<double> w(weights.begin(), weights.end());
    Tape::current()->record(out, [X, O, w = std::move(w)] {
      double* gx = grad_of(X);
      for (std::size_t i = 0; i < w.size(); ++i) gx[i] += O->grad[0] * w[i];
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  constexpr double eps = 1e-5;
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " vs last axis of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xs = x.data(), gs = gain.data(), bs = bias.data();
  std::vector<double> y(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xs.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
      y[r * d + j] = xhat[r * d + j] * gs[j] + bs[j];
    }
  }
  const bool track = tracking({&x, &gain, &bias});
  Tensor out = make_output(x.shape(), std::move(y), track, "layer_norm");
  if (track) {
    NodePtr X = x.node(), G = gain.node(), B = bias.node(), O = out.node();
    Tape::current()->record(out, [X, G, B, O, rows, d, xhat = std::move(xhat),
                                  inv_std = std::move(inv_std)] {
      const double* g = O->grad.data();
      if (G->requires_grad || B->requires_grad) {
        double* gg = G->requires_grad ? grad_of(G) : nullptr;
        double* gb = B->requires_grad ? grad_of(B) : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += g[r * d + j] * xhat[r * d + j];
            if (gb) gb[j] += g[r * d + j];
          }
        }
      }
      if (X->requires_grad) {
        double* gx = grad_of(X);
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dy = 0.0, mean_dy_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dy = g[r * d + j] * G->data[j];
            mean_dy += dy;
            mean_dy_xhat += dy * xhat[r * d + j];
          }
          mean_dy *= inv_d;
          mean_dy_xhat *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dy = g[r * d + j] * G->data[j];
            gx[r * d + j] += inv_std[r] * (dy - mean_dy - xhat[r * d + j] * mean_dy_xhat);
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Backward of a row softmax: dx = y * (dy - sum(y * dy)).
void softmax_backward_rows(const NodePtr& X, const NodePtr& O, std::size_t rows, std::size_t n) {
  double* gx = grad_of(X);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* y = O->data.data() + r * n;
    const double* gy = O->grad.data() + r * n;
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
    for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (gy[j] - dot);
  }
}

}  // namespace

Tensor softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xs = x.data();
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xs.data() + r * n;
    const double m = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[r * n + j] = std::exp(xr[j] - m));
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] /= z;
  }
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), std::move(y), track, "softmax");
  if (track) {
    NodePtr X = x.node(), O = out.node();
    Tape::current()->record(out, [X, O, rows, n] { softmax_backward_rows(X, O, rows, n); });
  }
  return out;
}

Tensor masked_softmax(const Tensor& scores, std::span<const unsigned char> key_valid,
                      std::size_t heads) {
  require_rank(scores, 3, "masked_softmax");
  const std::size_t groups = scores.dim(0), len = scores.dim(1);
  if (scores.dim(2) != len || heads == 0 || groups % heads != 0 ||
      key_valid.size() != (groups / heads) * len) {
    throw DimensionError("masked_softmax: scores " + shape_string(scores.shape()) + " with " +
                         std::to_string(key_valid.size()) + " key flags and " +
                         std::to_string(heads) + " heads");
  }
  const auto xs = scores.data();
  std::vector<double> y(scores.numel(), 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    const unsigned char* valid = key_valid.data() + (g / heads) * len;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t base = (g * len + i) * len;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) {
        if (valid[j]) m = std::max(m, xs[base + j]);
      }
      if (!std::isfinite(m)) throw ContractError("masked_softmax: row with no valid key");
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        if (valid[j]) z += (y[base + j] = std::exp(xs[base + j] - m));
      }
      for (std::size_t j = 0; j < len; ++j) y[base + j] /= z;
    }
  }
  const bool track = tracking({&scores});
  Tensor out = make_output(scores.shape(), std::move(y), track, "masked_softmax");
  if (track) {
    NodePtr X = scores.node(), O = out.node();
    Tape::current()->record(out, [X, O, groups, len] { softmax_backward_rows(X, O, groups * len, len); });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> gold) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (gold.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(gold.size()) +
                         " labels for logits " + shape_string(logits.shape()));
  }
  const auto xs = logits.data();
  std::vector<double> probs(xs.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (gold[b] >= classes) {
      throw LabelError("gold index " + std::to_string(gold[b]) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
    const double* xr = xs.data() + b * classes;
    const std::size_t top = static_cast<std::size_t>(std::max_element(xr, xr + classes) - xr);
    const double m = xr[top];
    // log-sum-exp as m + log1p(rest) keeps precision when the top class dominates
    double rest = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      probs[b * classes + j] = std::exp(xr[j] - m);
      if (j != top) rest += probs[b * classes + j];
    }
    const double z = 1.0 + rest;
    for (std::size_t j = 0; j < classes; ++j) probs[b * classes + j] /= z;
    loss += std::log1p(rest) + (m - xr[gold[b]]);
  }
  loss /= static_cast<double>(batch);
  const bool track = tracking({&logits});
  Tensor out = make_output({1}, {loss}, track, "softmax_cross_entropy");
  if (track) {
    NodePtr X = logits.node(), O = out.node();
    std::vector<std::size_t> labels(gold.begin(), gold.end());
    Tape::current()->record(out, [X, O, batch, classes, probs = std::move(probs),
                                  labels = std::move(labels)] {
      double* gx = grad_of(X);
      const double g = O->grad[0] / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < classes; ++j) {
          const double onehot = j == labels[b] ? 1.0 : 0.0;
          gx[b * classes + j] += g * (probs[b * classes + j] - onehot);
        }
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> y(ids.size() * d);
  const auto ts = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside table " +
                           shape_string(table.shape()));
    }
    std::copy_n(ts.data() + ids[i] * d, d, y.data() + i * d);
  }
  const bool track = tracking({&table});
  Tensor out = make_output({ids.size(), d}, std::move(y), track, "embedding");
  if (track) {
    NodePtr T = table.node(), O = out.node();
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    Tape::current()->record(out, [T, O, d, idx = std::move(idx)] {
      double* gt = grad_of(T);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += O->grad[i * d + j];
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> y(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                           shape_string(x.shape()));
    }
    std::copy_n(x.data().data() + rows[i] * d, d, y.data() + i * d);
  }
  const bool track = tracking({&x});
  Tensor out = make_output({rows.size(), d}, std::move(y), track, "gather_rows");
  if (track) {
    NodePtr X = x.node(), O = out.node();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Tape::current()->record(out, [X, O, d, idx = std::move(idx)] {
      double* gx = grad_of(X);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) gx[idx[i] * d + j] += O->grad[i * d + j];
      }
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("concat_cols: row mismatch " + shape_string(a.shape()) + " | " +
                         shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<double> y(n * (p + q));
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.data().data() + r * p, p, y.data() + r * (p + q));
    std::copy_n(b.data().data() + r * q, q, y.data() + r * (p + q) + p);
  }
  const bool track = tracking({&a, &b});
  Tensor out = make_output({n, p + q}, std::move(y), track, "concat_cols");
  if (track) {
    NodePtr A = a.node(), B = b.node(), O = out.node();
    Tape::current()->record(out, [A, B, O, n, p, q] {
      for (std::size_t r = 0; r < n; ++r) {
        if (A->requires_grad) {
          double* ga = grad_of(A);
          for (std::size_t j = 0; j < p; ++j) ga[r * p + j] += O->grad[r * (p + q) + j];
        }
        if (B->requires_grad) {
          double* gb = grad_of(B);
          for (std::size_t j = 0; j < q; ++j) gb[r * q + j] += O->grad[r * (p + q) + p + j];
        }
      }
    });
  }
  return out;
}

namespace {

// Index map between [(B*L) x (H*dh)] and [(B*H) x L x dh].
template <typename F>
void for_each_head_index(std::size_t batch, std::size_t len, std::size_t heads, std::size_t dh, F f) {
  const std::size_t d = heads * dh;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t flat = (b * len + l) * d + h * dh;
        const std::size_t split = ((b * heads + h) * len + l) * dh;
        for (std::size_t k = 0; k < dh; ++k) f(flat + k, split + k);
      }
    }
  }
}

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require_rank(x, 2, "split_heads");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (batch == 0 || heads == 0 || rows % batch != 0 || d % heads != 0) {
    throw DimensionError("split_heads: " + shape_string(x.shape()) + " into batch " +
                         std::to_string(batch) + " and " + std::to_string(heads) + " heads");
  }
  const std::size_t len = rows / batch, dh = d / heads;
  std::vector<double> y(x.numel());
  const auto xs = x.data();
  for_each_head_index(batch, len, heads, dh, [&](std::size_t f, std::size_t s) { y[s] = xs[f]; });
  const bool track = tracking({&x});
  Tensor out = make_output({batch * heads, len, dh}, std::move(y), track, "split_heads");
  if (track) {
    NodePtr X = x.node(), O = out.node();
    Tape::current()->record(out, [X, O, batch, len, heads, dh] {
      double* gx = grad_of(X);
      for_each_head_index(batch, len, heads, dh,
                          [&](std::size_t f, std::size_t s) { gx[f] += O->grad[s]; });
    });
  }
  return out;
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  if (batch == 0 || heads == 0 || x.dim(0) != batch * heads) {
    throw DimensionError("merge_heads: " + shape_string(x.shape()) + " with batch " +
                         std::to_string(batch) + " and " + std::to_string(heads) + " heads");
  }
  const std::size_t len = x.dim(1), dh = x.dim(2);
  std::vector<double> y(x.numel());
  const auto xs = x.data();
  for_each_head_index(batch, len, heads, dh, [&](std::size_t f, std::size_t s) { y[f] = xs[s]; });
  const bool track = tracking({&x});
  Tensor out = make_output({batch * len, heads * dh}, std::move(y), track, "merge_heads");
  if (track) {
    NodePtr X = x.node(), O = out.node();
    Tape::current()->record(out, [X, O, batch, len, heads, dh] {
      double* gx = grad_of(X);
      for_each_head_index(batch, len, heads, dh,
                          [&](std::size_t f, std::size_t s) { gx[s] += O->grad[f]; });
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  std::vector<double> y(x.data().begin(), x.data().end());
  const bool track = tracking({&x});
  Tensor out(std::move(shape), std::move(y), track);
  out.node()->leaf = !track;
  if (track) {
    NodePtr X = x.node(), O = out.node();
    Tape::current()->record(out, [X, O] {
      double* gx = grad_of(X);
      for (std::size_t i = 0; i < O->data.size(); ++i) gx[i] += O->grad[i];
    });
  }
  return out;
}

}  // namespace vibre
