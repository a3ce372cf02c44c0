// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Brute-force references used only by tests.

#include <cmath>
#include <vector>

namespace selftrain::testing {

// Enumerates all K^n tag paths in lexicographic order.
template <class Fn>
void for_each_path(std::size_t n, std::size_t K, Fn&& fn) {
  std::vector<int> path(n, 0);
  for (;;) {
    fn(path);
    std::size_t i = n;
    while (i > 0) {
      --i;
      if (static_cast<std::size_t>(++path[i]) < K) break;
      path[i] = 0;
      if (i == 0) return;
    }
    if (n == 0) return;
  }
}

// Path score on a dense [n, K] emission block (no mask), long double.
inline long double path_score(const std::vector<double>& emis, const std::vector<double>& trans,
                              const std::vector<double>& start, const std::vector<double>& end,
                              const std::vector<int>& path, std::size_t K) {
  long double s = start[path[0]] + end[path.back()];
  for (std::size_t t = 0; t < path.size(); ++t) {
    s += emis[t * K + path[t]];
    if (t) s += trans[path[t - 1] * K + path[t]];
  }
  return s;
}

struct BruteForceCrf {
  long double log_z = 0;
  std::vector<int> argmax;  // first (lexicographically smallest) maximiser
  long double best = 0;
  long double total_prob = 0;  // sum over paths of exp(score - log_z)
};

inline BruteForceCrf brute_force_crf(const std::vector<double>& emis, const std::vector<double>& trans,
                                     const std::vector<double>& start, const std::vector<double>& end, std::size_t n,
                                     std::size_t K) {
  std::vector<long double> scores;
  BruteForceCrf out;
  bool first = true;
  for_each_path(n, K, [&](const std::vector<int>& p) {
    const long double s = path_score(emis, trans, start, end, p, K);
    scores.push_back(s);
    if (first || s > out.best) {
      out.best = s;
      out.argmax = p;
      first = false;
    }
  });
  long double mx = scores[0];
  for (auto s : scores) mx = std::max(mx, s);
  long double z = 0;
  for (auto s : scores) z += std::exp(s - mx);
  out.log_z = mx + std::log(z);
  for (auto s : scores) out.total_prob += std::exp(s - out.log_z);
  return out;
}

// Spans as (type, start, end-inclusive) from BIO names; stray I- opens a span.
struct Span {
  std::string type;
  std::size_t start, end;
  auto operator<=>(const Span&) const = default;
};

}  // namespace selftrain::testing
