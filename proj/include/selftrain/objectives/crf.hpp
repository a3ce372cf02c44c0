// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Linear-chain CRF over per-token emission scores.
//
// Only positions with mask == 1 take part; they are read in order and treated
// as one contiguous chain. A path y over n positions scores
//   start[y0] + sum_t E[t, y_t] + sum_t trans[y_{t-1}, y_t] + end[y_{n-1}].

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "selftrain/model/encoder.hpp"

namespace selftrain {

namespace detail {

template <class T>
T logsumexp(std::span<const T> v) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  T s = T(0);
  for (T x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

inline std::vector<std::size_t> unmasked_positions(std::span<const int> mask, std::size_t seq) {
  std::vector<std::size_t> idx;
  for (std::size_t t = 0; t < seq; ++t)
    if (mask.empty() || mask[t]) idx.push_back(t);
  return idx;
}

// Forward-backward on one chain. `emis` points at a [seq, K] block.
template <class T>
struct ChainPosterior {
  T log_z = T(0);
  std::vector<T> unary;     // [n, K] marginals
  std::vector<T> pairwise;  // [K, K] expected transition counts
};

template <class T>
ChainPosterior<T> chain_forward_backward(const T* emis, const std::vector<std::size_t>& idx, std::size_t K,
                                         std::span<const T> trans, std::span<const T> start, std::span<const T> end,
                                         bool need_posteriors) {
  const std::size_t n = idx.size();
  std::vector<T> alpha(n * K), beta(n * K), buf(K);
  for (std::size_t k = 0; k < K; ++k) alpha[k] = start[k] + emis[idx[0] * K + k];
  for (std::size_t t = 1; t < n; ++t)
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t i = 0; i < K; ++i) buf[i] = alpha[(t - 1) * K + i] + trans[i * K + j];
      alpha[t * K + j] = logsumexp<T>(buf) + emis[idx[t] * K + j];
    }
  for (std::size_t k = 0; k < K; ++k) buf[k] = alpha[(n - 1) * K + k] + end[k];
  ChainPosterior<T> post;
  post.log_z = logsumexp<T>(buf);
  if (!need_posteriors) return post;

  for (std::size_t k = 0; k < K; ++k) beta[(n - 1) * K + k] = end[k];
  for (std::size_t t = n - 1; t-- > 0;)
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) buf[j] = trans[i * K + j] + emis[idx[t + 1] * K + j] + beta[(t + 1) * K + j];
      beta[t * K + i] = logsumexp<T>(buf);
    }
  post.unary.resize(n * K);
  post.pairwise.assign(K * K, T(0));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < K; ++k) post.unary[t * K + k] = std::exp(alpha[t * K + k] + beta[t * K + k] - post.log_z);
  for (std::size_t t = 0; t + 1 < n; ++t)
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j)
        post.pairwise[i * K + j] += std::exp(alpha[t * K + i] + trans[i * K + j] + emis[idx[t + 1] * K + j] +
                                             beta[(t + 1) * K + j] - post.log_z);
  return post;
}

template <class T>
void check_crf_shapes(const Tensor<T>& emissions, const CrfParams<T>& crf, const char* op) {
  const auto K = crf.num_tags();
  if (emissions.shape().back() != K || crf.transitions.numel() != K * K || crf.end.numel() != K)
    throw DimensionError(std::string(op) + ": emissions " + shape_str(emissions.shape()) + " vs CRF with " +
                         std::to_string(K) + " tags");
}

}  // namespace detail

// log of the sum over all tag paths of exp(path score); emissions [S, K].
template <class T>
Tensor<T> crf_log_partition(const Tensor<T>& emissions, std::span<const int> mask, const CrfParams<T>& crf) {
  using namespace detail;
  check_crf_shapes(emissions, crf, "crf_log_partition");
  if (emissions.rank() != 2) throw DimensionError("crf_log_partition: emissions must be [S, K]");
  const auto S = emissions.dim(0), K = crf.num_tags();
  if (!mask.empty() && mask.size() != S) throw DimensionError("crf_log_partition: mask length mismatch");
  const auto idx = unmasked_positions(mask, S);
  if (idx.empty()) throw ContractError("crf_log_partition: sequence has no unmasked positions");
  const bool track = any_requires_grad<T>({&emissions, &crf.transitions, &crf.start, &crf.end});
  auto post = chain_forward_backward<T>(emissions.data().data(), idx, K, crf.transitions.data(), crf.start.data(),
                                        crf.end.data(), track);
  auto out = make_output<T>({1}, {post.log_z}, track);
  if (track)
    record<T>(out, [en = emissions.node(), tn = crf.transitions.node(), sn = crf.start.node(), nn = crf.end.node(),
                    idx, post = std::move(post), K](std::span<const T> g) {
      const std::size_t n = idx.size();
      if (en->requires_grad) {
        auto d = en->ensure_grad();
        for (std::size_t t = 0; t < n; ++t)
          for (std::size_t k = 0; k < K; ++k) d[idx[t] * K + k] += g[0] * post.unary[t * K + k];
      }
      if (tn->requires_grad) {
        auto d = tn->ensure_grad();
        for (std::size_t i = 0; i < K * K; ++i) d[i] += g[0] * post.pairwise[i];
      }
      if (sn->requires_grad) {
        auto d = sn->ensure_grad();
        for (std::size_t k = 0; k < K; ++k) d[k] += g[0] * post.unary[k];
      }
      if (nn->requires_grad) {
        auto d = nn->ensure_grad();
        for (std::size_t k = 0; k < K; ++k) d[k] += g[0] * post.unary[(n - 1) * K + k];
      }
    });
  return out;
}

// Score of one tag path over the unmasked positions of an [S, K] emission block.
template <class T>
T crf_path_score(std::span<const T> emissions, std::span<const int> mask, std::span<const int> tags,
                 const CrfParams<T>& crf) {
  const auto K = crf.num_tags();
  const auto S = emissions.size() / K;
  const auto idx = detail::unmasked_positions(mask, S);
  T s = T(0);
  for (std::size_t t = 0; t < idx.size(); ++t) {
    const auto y = static_cast<std::size_t>(tags[idx[t]]);
    s += emissions[idx[t] * K + y];
    if (t == 0)
      s += crf.start[y];
    else
      s += crf.transitions[static_cast<std::size_t>(tags[idx[t - 1]]) * K + y];
  }
  s += crf.end[static_cast<std::size_t>(tags[idx.back()])];
  return s;
}

// Mean over the batch of log_partition - gold path score. emissions [B, S, K];
// tags and mask are [B * S]. Tags are only read where mask == 1.
template <class T>
Tensor<T> crf_nll(const Tensor<T>& emissions, std::span<const int> tags, std::span<const int> mask,
                  const CrfParams<T>& crf) {
  using namespace detail;
  check_crf_shapes(emissions, crf, "crf_nll");
  if (emissions.rank() != 3) throw DimensionError("crf_nll: emissions must be [B, S, K]");
  const auto B = emissions.dim(0), S = emissions.dim(1), K = crf.num_tags();
  if (tags.size() != B * S || mask.size() != B * S) throw DimensionError("crf_nll: tags/mask must be [B * S]");
  const bool track = any_requires_grad<T>({&emissions, &crf.transitions, &crf.start, &crf.end});

  struct Row {
    std::vector<std::size_t> idx;
    ChainPosterior<T> post;
  };
  std::vector<Row> rows(B);
  T total = T(0);
  for (std::size_t b = 0; b < B; ++b) {
    auto m = mask.subspan(b * S, S);
    auto& row = rows[b];
    row.idx = unmasked_positions(m, S);
    if (row.idx.empty()) throw ContractError("crf_nll: sequence " + std::to_string(b) + " has no unmasked positions");
    for (auto t : row.idx) {
      const int y = tags[b * S + t];
      if (y < 0 || static_cast<std::size_t>(y) >= K)
        throw IndexError("crf_nll: tag id " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    }
    const T* e = emissions.data().data() + b * S * K;
    row.post = chain_forward_backward<T>(e, row.idx, K, crf.transitions.data(), crf.start.data(), crf.end.data(),
                                         track);
    total += row.post.log_z - crf_path_score<T>(std::span<const T>(e, S * K), m, tags.subspan(b * S, S), crf);
  }
  const T inv_b = T(1) / static_cast<T>(B);
  auto out = make_output<T>({1}, {total * inv_b}, track);
  if (track)
    record<T>(out, [en = emissions.node(), tn = crf.transitions.node(), sn = crf.start.node(), nn = crf.end.node(),
                    rows = std::move(rows), tg = std::vector<int>(tags.begin(), tags.end()), S, K,
                    inv_b](std::span<const T> g) {
      const T s = g[0] * inv_b;
      std::span<T> de, dt, ds, dn;
      if (en->requires_grad) de = en->ensure_grad();
      if (tn->requires_grad) dt = tn->ensure_grad();
      if (sn->requires_grad) ds = sn->ensure_grad();
      if (nn->requires_grad) dn = nn->ensure_grad();
      for (std::size_t b = 0; b < rows.size(); ++b) {
        const auto& idx = rows[b].idx;
        const auto& post = rows[b].post;
        const std::size_t n = idx.size();
        auto gold = [&](std::size_t t) { return static_cast<std::size_t>(tg[b * S + idx[t]]); };
        if (!de.empty())
          for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t k = 0; k < K; ++k) de[(b * S + idx[t]) * K + k] += s * post.unary[t * K + k];
            de[(b * S + idx[t]) * K + gold(t)] -= s;
          }
        if (!dt.empty()) {
          for (std::size_t i = 0; i < K * K; ++i) dt[i] += s * post.pairwise[i];
          for (std::size_t t = 1; t < n; ++t) dt[gold(t - 1) * K + gold(t)] -= s;
        }
        if (!ds.empty()) {
          for (std::size_t k = 0; k < K; ++k) ds[k] += s * post.unary[k];
          ds[gold(0)] -= s;
        }
        if (!dn.empty()) {
          for (std::size_t k = 0; k < K; ++k) dn[k] += s * post.unary[(n - 1) * K + k];
          dn[gold(n - 1)] -= s;
        }
      }
    });
  return out;
}

// Highest-scoring path over the unmasked positions of an [S, K] emission
// block, one tag per unmasked position. Among equal-scoring paths the
// lexicographically smallest (lowest tag id first) wins: exact best-suffix
// scores are computed right-to-left, then tags are chosen greedily
// left-to-right taking the lowest id on ties.
template <class T>
std::vector<int> crf_viterbi(std::span<const T> emissions, std::span<const int> mask, const CrfParams<T>& crf) {
  const auto K = crf.num_tags();
  if (K == 0 || emissions.size() % K != 0) throw DimensionError("crf_viterbi: emissions not a multiple of num_tags");
  const auto S = emissions.size() / K;
  if (!mask.empty() && mask.size() != S) throw DimensionError("crf_viterbi: mask length mismatch");
  const auto idx = detail::unmasked_positions(mask, S);
  if (idx.empty()) throw ContractError("crf_viterbi: sequence has no unmasked positions");
  const std::size_t n = idx.size();
  auto trans = crf.transitions.data();
  std::vector<T> best(n * K);  // best score of positions t..n-1 given tag at t
  for (std::size_t k = 0; k < K; ++k) best[(n - 1) * K + k] = emissions[idx[n - 1] * K + k] + crf.end[k];
  for (std::size_t t = n - 1; t-- > 0;)
    for (std::size_t i = 0; i < K; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < K; ++j) mx = std::max(mx, trans[i * K + j] + best[(t + 1) * K + j]);
      best[t * K + i] = emissions[idx[t] * K + i] + mx;
    }
  std::vector<int> path(n);
  auto pick = [&](auto score_of) {
    std::size_t arg = 0;
    T mx = score_of(0);
    for (std::size_t k = 1; k < K; ++k) {
      const T v = score_of(k);
      if (v > mx) {
        mx = v;
        arg = k;
      }
    }
    return arg;
  };
  path[0] = static_cast<int>(pick([&](std::size_t k) { return crf.start[k] + best[k]; }));
  for (std::size_t t = 1; t < n; ++t) {
    const auto prev = static_cast<std::size_t>(path[t - 1]);
    path[t] = static_cast<int>(pick([&](std::size_t k) { return trans[prev * K + k] + best[t * K + k]; }));
  }
  return path;
}

// Per-position tag marginals [n_unmasked, K].
template <class T>
std::vector<T> crf_marginals(std::span<const T> emissions, std::span<const int> mask, const CrfParams<T>& crf) {
  const auto K = crf.num_tags();
  const auto S = emissions.size() / K;
  const auto idx = detail::unmasked_positions(mask, S);
  if (idx.empty()) throw ContractError("crf_marginals: sequence has no unmasked positions");
  return detail::chain_forward_backward<T>(emissions.data(), idx, K, crf.transitions.data(), crf.start.data(),
                                           crf.end.data(), true)
      .unary;
}

}  // namespace selftrain
