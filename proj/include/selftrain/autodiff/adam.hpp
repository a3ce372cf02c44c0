// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "selftrain/autodiff/tensor.hpp"

namespace selftrain {

// A trainable tensor plus whether L2 decay applies to it. Biases and
// layer-norm affine parameters are registered with decay = false.
template <class T>
struct Param {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;
};

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
};

// Linear warmup to the peak at warmup_steps, then linear decay to zero at
// total_steps. Clamped to zero beyond total_steps.
inline double lr_multiplier(std::int64_t t, std::int64_t warmup_steps, std::int64_t total_steps) {
  if (t <= 0) return 0.0;
  const double up = warmup_steps > 0 ? static_cast<double>(t) / static_cast<double>(warmup_steps) : 1.0;
  double down = 1.0;
  if (total_steps > warmup_steps)
    down = std::max(0.0, static_cast<double>(total_steps - t) /
                             static_cast<double>(total_steps - warmup_steps));
  else if (t > total_steps)
    down = 0.0;
  return std::min(up, down);
}

template <class T>
class AdamState {
 public:
  AdamState(const std::vector<Param<T>>& params, AdamOptions opts) : opts_(opts) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  std::int64_t step_count() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return opts_; }
  double effective_lr(std::int64_t t) const {
    return opts_.lr * lr_multiplier(t, opts_.warmup_steps, opts_.total_steps);
  }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

  // Bias-corrected Adam with coupled L2 (wd * theta added to the gradient).
  // Moments are held in double regardless of T. Gradients are cleared.
  void step(std::vector<Param<T>>& params) {
    if (params.size() != m_.size()) throw ContractError("adam_step: parameter list changed size");
    ++t_;
    const double lr = effective_lr(t_);
    if (t_ > opts_.total_steps && !warned_) {
      spdlog::warn("adam_step: step {} beyond total_steps {}; learning rate clamped to 0", t_,
                   opts_.total_steps);
      warned_ = true;
    }
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].tensor;
      if (!p.has_grad()) continue;
      const double wd = params[i].decay ? opts_.weight_decay : 0.0;
      auto data = p.data();
      auto grad = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = static_cast<double>(grad[j]) + wd * static_cast<double>(data[j]);
        m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g;
        v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g * g;
        if (lr == 0.0) continue;
        const double mhat = m[j] / bc1, vhat = v[j] / bc2;
        data[j] = static_cast<T>(static_cast<double>(data[j]) - lr * mhat / (std::sqrt(vhat) + opts_.eps));
      }
      p.zero_grad();
    }
  }

 private:
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
  bool warned_ = false;
};

template <class T>
void adam_step(std::vector<Param<T>>& params, AdamState<T>& state) {
  state.step(params);
}

}  // namespace selftrain
