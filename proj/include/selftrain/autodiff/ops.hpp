// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Differentiable tensor operations. All ops are row-major; "rows" means the
// flattened leading dimensions and the last dimension is the feature axis.
// GEMM kernels go through Eigen maps over the tensor buffers (single-threaded,
// so reductions are deterministic).

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "selftrain/autodiff/tensor.hpp"
#include "selftrain/core/rng.hpp"

namespace selftrain {

namespace detail {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;
using Stride = Eigen::OuterStride<Eigen::Dynamic>;
template <class T>
using SMapR = Eigen::Map<MatR<T>, 0, Stride>;
template <class T>
using CSMapR = Eigen::Map<const MatR<T>, 0, Stride>;

inline std::size_t last_dim(const Shape& s) { return s.back(); }
inline std::size_t leading(const Shape& s) { return shape_numel(s) / s.back(); }

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

template <class T>
void accumulate(const std::shared_ptr<TensorNode<T>>& node, std::span<const T> g) {
  if (!node->requires_grad) return;
  auto dst = node->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

// C[m,n] = A[m,k] B[k,n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer<T> out(m * n);
  MapR<T>(out.data(), m, n).noalias() =
      CMapR<T>(a.data().data(), m, k) * CMapR<T>(b.data().data(), k, n);
  const bool track = any_requires_grad<T>({&a, &b});
  auto c = make_output<T>({m, n}, std::move(out), track);
  if (track) {
    record<T>(c, [an = a.node(), bn = b.node(), m, k, n](std::span<const T> g) {
      CMapR<T> dc(g.data(), m, n);
      if (an->requires_grad)
        MapR<T>(an->ensure_grad().data(), m, k).noalias() +=
            dc * CMapR<T>(bn->data.data(), k, n).transpose();
      if (bn->requires_grad)
        MapR<T>(bn->ensure_grad().data(), k, n).noalias() +=
            CMapR<T>(an->data.data(), m, k).transpose() * dc;
    });
  }
  return c;
}

// y[..., out] = x[..., in] W[in, out] + b[out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  using namespace detail;
  const auto in = last_dim(x.shape());
  if (w.rank() != 2 || w.dim(0) != in || b.numel() != w.dim(1))
    throw DimensionError("linear: input " + shape_str(x.shape()) + " weight " +
                         shape_str(w.shape()) + " bias " + shape_str(b.shape()));
  const auto rows = leading(x.shape()), out_dim = w.dim(1);
  Buffer<T> out(rows * out_dim);
  MapR<T> y(out.data(), rows, out_dim);
  y.noalias() = CMapR<T>(x.data().data(), rows, in) * CMapR<T>(w.data().data(), in, out_dim);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(), out_dim);
  Shape shape = x.shape();
  shape.back() = out_dim;
  const bool track = any_requires_grad<T>({&x, &w, &b});
  auto result = make_output<T>(std::move(shape), std::move(out), track);
  if (track) {
    record<T>(result, [xn = x.node(), wn = w.node(), bn = b.node(), rows, in,
                       out_dim](std::span<const T> g) {
      CMapR<T> dy(g.data(), rows, out_dim);
      if (xn->requires_grad)
        MapR<T>(xn->ensure_grad().data(), rows, in).noalias() +=
            dy * CMapR<T>(wn->data.data(), in, out_dim).transpose();
      if (wn->requires_grad)
        MapR<T>(wn->ensure_grad().data(), in, out_dim).noalias() +=
            CMapR<T>(xn->data.data(), rows, in).transpose() * dy;
      if (bn->requires_grad)
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bn->ensure_grad().data(), out_dim) +=
            dy.colwise().sum();
    });
  }
  return result;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  require_same_shape(a, b, "add");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  const bool track = any_requires_grad<T>({&a, &b});
  auto c = make_output<T>(a.shape(), std::move(out), track);
  if (track)
    record<T>(c, [an = a.node(), bn = b.node()](std::span<const T> g) {
      accumulate(an, g);
      accumulate(bn, g);
    });
  return c;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  require_same_shape(a, b, "mul");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  const bool track = any_requires_grad<T>({&a, &b});
  auto c = make_output<T>(a.shape(), std::move(out), track);
  if (track)
    record<T>(c, [an = a.node(), bn = b.node()](std::span<const T> g) {
      if (an->requires_grad) {
        auto da = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto db = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * an->data[i];
      }
    });
  return c;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  using namespace detail;
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  const bool track = any_requires_grad<T>({&a});
  auto c = make_output<T>(a.shape(), std::move(out), track);
  if (track)
    record<T>(c, [an = a.node(), factor](std::span<const T> g) {
      auto da = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * factor;
    });
  return c;
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  using namespace detail;
  T s = T(0);
  for (T v : a.data()) s += v;
  const bool track = any_requires_grad<T>({&a});
  auto c = make_output<T>({1}, {s}, track);
  if (track)
    record<T>(c, [an = a.node()](std::span<const T> g) {
      auto da = an->ensure_grad();
      for (auto& d : da) d += g[0];
    });
  return c;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Same data, new shape.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  using namespace detail;
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  const bool track = any_requires_grad<T>({&a});
  auto c = make_output<T>(std::move(shape), Buffer<T>(a.data().begin(), a.data().end()), track);
  if (track) record<T>(c, [an = a.node()](std::span<const T> g) { accumulate(an, g); });
  return c;
}

namespace detail {

template <class T>
void softmax_rows(std::span<const T> in, std::span<T> out, std::size_t cols) {
  const std::size_t rows = in.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    T z = T(0);
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    const T inv = T(1) / z;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  }
}

template <class T>
void log_softmax_rows(std::span<const T> in, std::span<T> out, std::size_t cols) {
  const std::size_t rows = in.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    T z = T(0);
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - lz;
  }
}

}  // namespace detail

// Softmax over the last axis, stabilised by subtracting the row max.
template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  using namespace detail;
  const auto cols = last_dim(x.shape());
  Buffer<T> out(x.numel());
  softmax_rows<T>(x.data(), out, cols);
  const bool track = any_requires_grad<T>({&x});
  auto y = make_output<T>(x.shape(), std::move(out), track);
  if (track)
    record<T>(y, [xn = x.node(), yn = y.node(), cols](std::span<const T> g) {
      auto dx = xn->ensure_grad();
      const auto& p = yn->data;
      for (std::size_t r = 0; r < g.size() / cols; ++r) {
        const std::size_t o = r * cols;
        T dot = T(0);
        for (std::size_t j = 0; j < cols; ++j) dot += g[o + j] * p[o + j];
        for (std::size_t j = 0; j < cols; ++j) dx[o + j] += p[o + j] * (g[o + j] - dot);
      }
    });
  return y;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  using namespace detail;
  const auto cols = last_dim(x.shape());
  Buffer<T> out(x.numel());
  log_softmax_rows<T>(x.data(), out, cols);
  const bool track = any_requires_grad<T>({&x});
  auto y = make_output<T>(x.shape(), std::move(out), track);
  if (track)
    record<T>(y, [xn = x.node(), yn = y.node(), cols](std::span<const T> g) {
      auto dx = xn->ensure_grad();
      const auto& ly = yn->data;
      for (std::size_t r = 0; r < g.size() / cols; ++r) {
        const std::size_t o = r * cols;
        T gs = T(0);
        for (std::size_t j = 0; j < cols; ++j) gs += g[o + j];
        for (std::size_t j = 0; j < cols; ++j) dx[o + j] += g[o + j] - std::exp(ly[o + j]) * gs;
      }
    });
  return y;
}

// Normalises each row to zero mean / unit variance, then applies gamma, beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-12)) {
  using namespace detail;
  const auto h = last_dim(x.shape());
  if (gamma.numel() != h || beta.numel() != h)
    throw DimensionError("layer_norm: feature size " + std::to_string(h) + " vs gamma " +
                         shape_str(gamma.shape()) + " beta " + shape_str(beta.shape()));
  const auto rows = leading(x.shape());
  Buffer<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * h;
    T mu = T(0);
    for (std::size_t j = 0; j < h; ++j) mu += xr[j];
    mu /= static_cast<T>(h);
    T var = T(0);
    for (std::size_t j = 0; j < h; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(h);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < h; ++j) {
      xhat[r * h + j] = (xr[j] - mu) * is;
      out[r * h + j] = xhat[r * h + j] * gamma[j] + beta[j];
    }
  }
  const bool track = any_requires_grad<T>({&x, &gamma, &beta});
  auto y = make_output<T>(x.shape(), std::move(out), track);
  if (track)
    record<T>(y, [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat),
                  inv_std = std::move(inv_std), rows, h](std::span<const T> g) {
      if (gn->requires_grad || bn->requires_grad) {
        auto dg = gn->ensure_grad();
        auto db = bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < h; ++j) {
            dg[j] += g[r * h + j] * xhat[r * h + j];
            db[j] += g[r * h + j];
          }
      }
      if (!xn->requires_grad) return;
      auto dx = xn->ensure_grad();
      const auto& gamma_v = gn->data;
      const T inv_h = T(1) / static_cast<T>(h);
      for (std::size_t r = 0; r < rows; ++r) {
        T s1 = T(0), s2 = T(0);
        for (std::size_t j = 0; j < h; ++j) {
          const T dxh = g[r * h + j] * gamma_v[j];
          s1 += dxh;
          s2 += dxh * xhat[r * h + j];
        }
        for (std::size_t j = 0; j < h; ++j) {
          const T dxh = g[r * h + j] * gamma_v[j];
          dx[r * h + j] += inv_std[r] * (dxh - inv_h * s1 - xhat[r * h + j] * inv_h * s2);
        }
      }
    });
  return y;
}

// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  using namespace detail;
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Buffer<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  const bool track = any_requires_grad<T>({&x});
  auto y = make_output<T>(x.shape(), std::move(out), track);
  if (track)
    record<T>(y, [xn = x.node()](std::span<const T> g) {
      constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
      auto dx = xn->ensure_grad();
      const auto& xv = xn->data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
        dx[i] += g[i] * (cdf + xv[i] * pdf);
      }
    });
  return y;
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  using namespace detail;
  Buffer<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  const bool track = any_requires_grad<T>({&x});
  auto y = make_output<T>(x.shape(), std::move(out), track);
  if (track)
    record<T>(y, [xn = x.node(), yn = y.node()](std::span<const T> g) {
      auto dx = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (T(1) - yn->data[i] * yn->data[i]);
    });
  return y;
}

// Rows of `table` [V, H] gathered by `ids`; result shape is `batch_shape` + [H].
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids, Shape batch_shape) {
  using namespace detail;
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be rank 2");
  if (shape_numel(batch_shape) != ids.size())
    throw DimensionError("embedding_lookup: " + std::to_string(ids.size()) + " ids for shape " +
                         shape_str(batch_shape));
  const auto vocab = table.dim(0), h = table.dim(1);
  Buffer<T> out(ids.size() * h);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " outside [0, " +
                       std::to_string(vocab) + ")");
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * h, h, out.data() + i * h);
  }
  batch_shape.push_back(h);
  const bool track = any_requires_grad<T>({&table});
  auto y = make_output<T>(std::move(batch_shape), std::move(out), track);
  if (track)
    record<T>(y, [tn = table.node(), idv = std::vector<int>(ids.begin(), ids.end()),
                  h](std::span<const T> g) {
      auto dt = tn->ensure_grad();
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < h; ++j) dt[static_cast<std::size_t>(idv[i]) * h + j] += g[i * h + j];
    });
  return y;
}

// Inverted dropout: kept activations are scaled by 1/(1-p). Identity when not
// training or p == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng* rng) {
  using namespace detail;
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  if (!rng) throw ContractError("dropout: training mode needs an Rng");
  const T keep_scale = T(1) / static_cast<T>(1.0 - p);
  Buffer<T> m(x.numel()), out(x.numel());
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = rng->uniform() < p ? T(0) : keep_scale;
    out[i] = x[i] * m[i];
  }
  const bool track = any_requires_grad<T>({&x});
  auto y = make_output<T>(x.shape(), std::move(out), track);
  if (track)
    record<T>(y, [xn = x.node(), m = std::move(m)](std::span<const T> g) {
      auto dx = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * m[i];
    });
  return y;
}

// x[B, S, H] -> x[:, pos, :] as [B, H].
template <class T>
Tensor<T> select_position(const Tensor<T>& x, std::size_t pos) {
  using namespace detail;
  if (x.rank() != 3 || pos >= x.dim(1))
    throw DimensionError("select_position: position " + std::to_string(pos) + " of " +
                         shape_str(x.shape()));
  const auto b = x.dim(0), s = x.dim(1), h = x.dim(2);
  Buffer<T> out(b * h);
  for (std::size_t i = 0; i < b; ++i)
    std::copy_n(x.data().data() + (i * s + pos) * h, h, out.data() + i * h);
  const bool track = any_requires_grad<T>({&x});
  auto y = make_output<T>({b, h}, std::move(out), track);
  if (track)
    record<T>(y, [xn = x.node(), b, s, h, pos](std::span<const T> g) {
      auto dx = xn->ensure_grad();
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < h; ++j) dx[(i * s + pos) * h + j] += g[i * h + j];
    });
  return y;
}

// Multi-head scaled dot-product self-attention over pre-projected q, k, v
// [B, S, H]. key_mask [B*S] holds 1 for real tokens and 0 for padding;
// padded keys get an additive -inf score. Dropout applies to the attention
// probabilities. When `probs_out` is given it receives the pre-dropout
// probabilities laid out [B, heads, S, S].
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::span<const int> key_mask, std::size_t heads, double p_drop,
                               bool training, Rng* rng, Buffer<T>* probs_out = nullptr) {
  using namespace detail;
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  if (q.rank() != 3) throw DimensionError("attention expects [B, S, H], got " + shape_str(q.shape()));
  const auto B = q.dim(0), S = q.dim(1), H = q.dim(2);
  if (heads == 0 || H % heads != 0)
    throw DimensionError("attention: hidden " + std::to_string(H) + " not divisible by heads " +
                         std::to_string(heads));
  if (key_mask.size() != B * S) throw DimensionError("attention: mask size mismatch");
  const auto dh = H / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const bool dropping = training && p_drop > 0.0;
  if (dropping && !rng) throw ContractError("attention: training dropout needs an Rng");
  const T keep_scale = dropping ? T(1) / static_cast<T>(1.0 - p_drop) : T(1);

  const std::size_t block = S * S;
  Buffer<T> probs(B * heads * block), drop_mask;
  if (dropping) drop_mask.resize(probs.size());
  Buffer<T> out(B * S * H, T(0));
  MatR<T> scores(S, S), pd(S, S);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t base = b * S * H;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      CSMapR<T> qh(q.data().data() + base + hd * dh, S, dh, Stride(H));
      CSMapR<T> kh(k.data().data() + base + hd * dh, S, dh, Stride(H));
      CSMapR<T> vh(v.data().data() + base + hd * dh, S, dh, Stride(H));
      scores.noalias() = qh * kh.transpose();
      T* P = probs.data() + (b * heads + hd) * block;
      for (std::size_t i = 0; i < S; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < S; ++j) {
          if (key_mask[b * S + j]) mx = std::max(mx, scores(i, j) * inv_sqrt);
        }
        T z = T(0);
        for (std::size_t j = 0; j < S; ++j) {
          const T e = key_mask[b * S + j] ? std::exp(scores(i, j) * inv_sqrt - mx) : T(0);
          P[i * S + j] = e;
          z += e;
        }
        const T inv = z > T(0) ? T(1) / z : T(0);
        for (std::size_t j = 0; j < S; ++j) P[i * S + j] *= inv;
      }
      Eigen::Map<const MatR<T>> Pm(P, S, S);
      if (dropping) {
        T* M = drop_mask.data() + (b * heads + hd) * block;
        for (std::size_t i = 0; i < block; ++i) M[i] = rng->uniform() < p_drop ? T(0) : keep_scale;
        pd = Pm.cwiseProduct(Eigen::Map<const MatR<T>>(M, S, S));
      } else {
        pd = Pm;
      }
      SMapR<T>(out.data() + base + hd * dh, S, dh, Stride(H)).noalias() = pd * vh;
    }
  }
  if (probs_out) *probs_out = probs;
  const bool track = any_requires_grad<T>({&q, &k, &v});
  auto y = make_output<T>(q.shape(), std::move(out), track);
  if (track)
    record<T>(y, [qn = q.node(), kn = k.node(), vn = v.node(), probs = std::move(probs),
                  drop_mask = std::move(drop_mask), B, S, H, heads, dh,
                  inv_sqrt](std::span<const T> g) {
      const std::size_t block = S * S;
      auto dq = qn->ensure_grad();
      auto dk = kn->ensure_grad();
      auto dv = vn->ensure_grad();
      MatR<T> pd(S, S), dpd(S, S), ds(S, S);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t base = b * S * H;
        for (std::size_t hd = 0; hd < heads; ++hd) {
          const std::size_t off = base + hd * dh;
          CSMapR<T> qh(qn->data.data() + off, S, dh, Stride(H));
          CSMapR<T> kh(kn->data.data() + off, S, dh, Stride(H));
          CSMapR<T> vh(vn->data.data() + off, S, dh, Stride(H));
          CSMapR<T> go(g.data() + off, S, dh, Stride(H));
          Eigen::Map<const MatR<T>> Pm(probs.data() + (b * heads + hd) * block, S, S);
          const bool dropped = !drop_mask.empty();
          if (dropped) {
            Eigen::Map<const MatR<T>> Mm(drop_mask.data() + (b * heads + hd) * block, S, S);
            pd = Pm.cwiseProduct(Mm);
            dpd.noalias() = go * vh.transpose();
            dpd = dpd.cwiseProduct(Mm);
          } else {
            pd = Pm;
            dpd.noalias() = go * vh.transpose();
          }
          SMapR<T>(dv.data() + off, S, dh, Stride(H)).noalias() += pd.transpose() * go;
          // softmax backward, row-wise
          for (std::size_t i = 0; i < S; ++i) {
            T dot = T(0);
            for (std::size_t j = 0; j < S; ++j) dot += dpd(i, j) * Pm(i, j);
            for (std::size_t j = 0; j < S; ++j) ds(i, j) = Pm(i, j) * (dpd(i, j) - dot) * inv_sqrt;
          }
          SMapR<T>(dq.data() + off, S, dh, Stride(H)).noalias() += ds * kh;
          SMapR<T>(dk.data() + off, S, dh, Stride(H)).noalias() += ds.transpose() * qh;
        }
      }
    });
  return y;
}

}  // namespace selftrain
