// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Central finite-difference oracle. Independent of the tape: it only calls the
// loss closure forward (inside NoGradScope) with perturbed parameter values.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "selftrain/autodiff/adam.hpp"
#include "selftrain/autodiff/tensor.hpp"

namespace selftrain::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  std::size_t checked = 0;
};

// Relative error with a floor on the denominator; gradients whose magnitude
// is below the floor are compared absolutely against it.
inline double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Fourth-order central difference: (8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h.
inline double fd_derivative(const std::function<double()>& f, double& x, double h) {
  const double orig = x;
  auto at = [&](double d) {
    x = orig + d;
    return f();
  };
  const double d1 = at(h) - at(-h);
  const double d2 = at(2 * h) - at(-2 * h);
  x = orig;
  return (8.0 * d1 - d2) / (12.0 * h);
}

// `loss` must build the loss from the current parameter values. Runs it once
// on a tape to collect analytic gradients, then compares every element
// (or every `stride`-th element) with central differences.
inline GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss, std::vector<Param<double>>& params,
                                       double h = 1e-3, double floor = 1e-6, std::size_t stride = 1) {
  for (auto& p : params) p.tensor.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    backward(loss());
  }
  auto eval = [&] {
    NoGradScope<double> ng;
    return loss().item();
  };
  GradCheckResult r;
  for (auto& p : params) {
    auto data = p.tensor.data();
    const bool has = p.tensor.has_grad();
    for (std::size_t i = 0; i < data.size(); i += stride) {
      const double analytic = has ? p.tensor.grad()[i] : 0.0;
      const double numeric = fd_derivative(eval, data[i], h);
      const double e = rel_error(analytic, numeric, floor);
      ++r.checked;
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        char buf[96];
        std::snprintf(buf, sizeof buf, "] analytic=%.6e numeric=%.6e", analytic, numeric);
        r.worst = p.name + "[" + std::to_string(i) + buf;
      }
    }
  }
  return r;
}

}  // namespace selftrain::testing
