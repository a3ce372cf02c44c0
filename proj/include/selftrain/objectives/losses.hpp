// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "selftrain/autodiff/ops.hpp"
#include "selftrain/objectives/variant.hpp"
#include "selftrain/text/masking.hpp"

namespace selftrain {

namespace detail {

// Mean over selected rows of -log softmax(logits)[target]. Rows whose target
// is negative are skipped; no selected rows gives 0 with a zero gradient.
template <class T>
Tensor<T> masked_row_cross_entropy(const Tensor<T>& logits, std::span<const int> targets, const char* op) {
  const auto cols = last_dim(logits.shape());
  const auto rows = leading(logits.shape());
  if (targets.size() != rows)
    throw DimensionError(std::string(op) + ": " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  std::vector<std::size_t> picked;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= cols)
      throw IndexError(std::string(op) + ": target " + std::to_string(targets[r]) + " outside [0, " +
                       std::to_string(cols) + ")");
    picked.push_back(r);
  }
  std::vector<T> logp(picked.size() * cols);
  T total = T(0);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const std::size_t r = picked[i];
    log_softmax_rows<T>(logits.data().subspan(r * cols, cols), std::span<T>(logp).subspan(i * cols, cols), cols);
    total -= logp[i * cols + static_cast<std::size_t>(targets[r])];
  }
  const T denom = picked.empty() ? T(1) : static_cast<T>(picked.size());
  const bool track = any_requires_grad<T>({&logits});
  auto loss = make_output<T>({1}, {total / denom}, track);
  if (track)
    record<T>(loss, [ln = logits.node(), picked = std::move(picked), logp = std::move(logp),
                     tg = std::vector<int>(targets.begin(), targets.end()), cols, denom](std::span<const T> g) {
      auto d = ln->ensure_grad();
      const T s = g[0] / denom;
      for (std::size_t i = 0; i < picked.size(); ++i) {
        const std::size_t r = picked[i];
        for (std::size_t j = 0; j < cols; ++j) d[r * cols + j] += s * std::exp(logp[i * cols + j]);
        d[r * cols + static_cast<std::size_t>(tg[r])] -= s;
      }
    });
  return loss;
}

// Mean over selected rows of KL(softmax(t/T) || softmax(s/T)). Gradient flows
// to the student only.
template <class T>
Tensor<T> masked_row_kl(const Tensor<T>& teacher, const Tensor<T>& student, std::span<const int> row_mask,
                        double temperature, const char* op) {
  if (teacher.shape() != student.shape())
    throw DimensionError(std::string(op) + ": teacher " + shape_str(teacher.shape()) + " vs student " +
                         shape_str(student.shape()));
  if (!(temperature > 0.0)) throw ContractError(std::string(op) + ": temperature must be positive");
  const auto cols = last_dim(student.shape());
  const auto rows = leading(student.shape());
  if (!row_mask.empty() && row_mask.size() != rows)
    throw DimensionError(std::string(op) + ": mask size " + std::to_string(row_mask.size()) + " for " +
                         std::to_string(rows) + " rows");
  const T inv_t = static_cast<T>(1.0 / temperature);
  std::vector<std::size_t> picked;
  for (std::size_t r = 0; r < rows; ++r)
    if (row_mask.empty() || row_mask[r]) picked.push_back(r);
  std::vector<T> p(picked.size() * cols), q(picked.size() * cols), lp(cols), lq(cols), buf(cols);
  T total = T(0);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const std::size_t r = picked[i];
    for (std::size_t j = 0; j < cols; ++j) buf[j] = teacher[r * cols + j] * inv_t;
    log_softmax_rows<T>(buf, lp, cols);
    for (std::size_t j = 0; j < cols; ++j) buf[j] = student[r * cols + j] * inv_t;
    log_softmax_rows<T>(buf, lq, cols);
    for (std::size_t j = 0; j < cols; ++j) {
      p[i * cols + j] = std::exp(lp[j]);
      q[i * cols + j] = std::exp(lq[j]);
      if (p[i * cols + j] > T(0)) total += p[i * cols + j] * (lp[j] - lq[j]);
    }
  }
  const T denom = picked.empty() ? T(1) : static_cast<T>(picked.size());
  const bool track = any_requires_grad<T>({&student});
  auto loss = make_output<T>({1}, {total / denom}, track);
  if (track)
    record<T>(loss, [sn = student.node(), picked = std::move(picked), p = std::move(p), q = std::move(q), cols,
                     denom, inv_t](std::span<const T> g) {
      auto d = sn->ensure_grad();
      const T s = g[0] * inv_t / denom;
      for (std::size_t i = 0; i < picked.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j)
          d[picked[i] * cols + j] += s * (q[i * cols + j] - p[i * cols + j]);
    });
  return loss;
}

}  // namespace detail

// Mean cross-entropy over positions whose label is not kNoMlmLabel.
template <class T>
Tensor<T> mlm_loss(const Tensor<T>& mlm_logits, std::span<const int> mlm_labels) {
  return detail::masked_row_cross_entropy(mlm_logits, mlm_labels, "mlm_loss");
}

template <class T>
Tensor<T> classification_ce_loss(const Tensor<T>& cls_logits, std::span<const int> labels) {
  for (int l : labels)
    if (l < 0) throw IndexError("classification_ce_loss: label " + std::to_string(l) + " is negative");
  return detail::masked_row_cross_entropy(cls_logits, labels, "classification_ce_loss");
}

// KL(softmax(teacher/T) || softmax(student/T)) averaged over examples.
template <class T>
Tensor<T> kl_logits_loss(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits, double temperature = 1.0) {
  return detail::masked_row_kl(teacher_logits, student_logits, {}, temperature, "kl_logits_loss");
}

// Per-token KL over emission logits [B, S, K], averaged over tokens with
// mask == 1.
template <class T>
Tensor<T> token_kl_loss(const Tensor<T>& teacher_token_logits, const Tensor<T>& student_token_logits,
                        std::span<const int> mask, double temperature = 1.0) {
  return detail::masked_row_kl(teacher_token_logits, student_token_logits, mask, temperature, "token_kl_loss");
}

// Unweighted sum of the task loss and (when the variant has one) the MLM loss.
template <class T>
Tensor<T> combined_loss(LossVariant variant, const Tensor<T>& task_loss, const std::optional<Tensor<T>>& mlm) {
  if (includes_mlm(variant)) {
    if (!mlm) throw ContractError(std::string("combined_loss: variant ") + to_string(variant) + " needs an MLM loss");
    return add(task_loss, *mlm);
  }
  if (mlm) throw ContractError(std::string("combined_loss: variant ") + to_string(variant) + " takes no MLM loss");
  return task_loss;
}

}  // namespace selftrain
