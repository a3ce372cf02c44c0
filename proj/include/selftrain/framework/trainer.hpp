// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <spdlog/spdlog.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "selftrain/autodiff/adam.hpp"
#include "selftrain/framework/workspace.hpp"
#include "selftrain/metrics/metrics.hpp"
#include "selftrain/model/encoder.hpp"
#include "selftrain/objectives/crf.hpp"
#include "selftrain/objectives/losses.hpp"

namespace selftrain {

using Model = EncoderModel<float>;

// Called with every training batch before its forward pass.
using BatchObserver = std::function<void(const std::string& stage, const TrainBatch&)>;

struct TrainLog {
  std::size_t steps = 0;
  std::vector<double> losses;

  // Mean loss over the first / last `fraction` of steps.
  double head_mean(double fraction = 0.1) const { return window_mean(0, span_len(fraction)); }
  double tail_mean(double fraction = 0.1) const {
    const auto n = span_len(fraction);
    return window_mean(losses.size() - n, n);
  }

 private:
  std::size_t span_len(double f) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(f * static_cast<double>(losses.size())));
  }
  double window_mean(std::size_t from, std::size_t n) const {
    if (losses.empty()) return 0.0;
    double s = 0;
    for (std::size_t i = from; i < from + n; ++i) s += losses[i];
    return s / static_cast<double>(n);
  }
};

enum class Objective { mlm, task, tsp };

struct ObjectiveSpec {
  Objective kind = Objective::task;
  LossVariant variant = LossVariant::LabelCE_only;  // tsp only
  bool masked_input = false;                        // mlm always masks
  double kl_temperature = 1.0;
};

namespace detail {

inline Tensor<float> task_loss(const Model& m, const Tensor<float>& h, const TrainBatch& b, TaskKind task) {
  if (task == TaskKind::classification) return classification_ce_loss(cls_logits(m, h), b.labels);
  return crf_nll(token_logits(m, h), b.tags, b.crf_mask, m.crf);
}

inline Tensor<float> teacher_tensor(const TrainBatch& b, const Shape& shape) {
  if (b.teacher_logits.size() != shape_numel(shape))
    throw ContractError("training batch carries " + std::to_string(b.teacher_logits.size()) +
                        " teacher logits, expected " + std::to_string(shape_numel(shape)));
  return Tensor<float>(shape, b.teacher_logits);
}

}  // namespace detail

// Runs `schedule` over `items` and returns the per-step losses. All
// randomness (order, masking, dropout) comes from streams derived from
// `seed`, so the result is a pure function of the arguments.
inline TrainLog train_model(Model& model, std::span<const TrainItem> items, const ScheduleConfig& schedule,
                            const ObjectiveSpec& objective, const Workspace& ws, std::uint64_t seed,
                            const std::string& stage, const BatchObserver& observer = {}) {
  TrainLog log;
  const std::size_t total = items.empty() ? 0 : schedule.total_steps(items.size());
  if (total == 0) return log;
  const TaskKind task = ws.task();
  const std::size_t K = ws.encoder.num_tags;
  AdamOptions opts;
  opts.lr = schedule.lr;
  opts.weight_decay = schedule.weight_decay;
  opts.total_steps = static_cast<std::int64_t>(total);
  opts.warmup_steps = static_cast<std::int64_t>(std::llround(schedule.warmup_fraction * static_cast<double>(total)));
  AdamState<float> adam(model.params(), opts);
  Rng order_rng(derive_seed(seed, "order")), mask_rng(derive_seed(seed, "mask")),
      dropout_rng(derive_seed(seed, "dropout"));
  const bool masks = objective.kind == Objective::mlm || objective.masked_input;
  const MaskOptions mask_opts = ws.config.mask;

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<PackedExample> scratch;
  log.losses.reserve(total);

  for (std::size_t step = 0; step < total; ++step) {
    if (cursor >= order.size()) {
      order_rng.shuffle(order);
      cursor = 0;
    }
    const std::size_t n = std::min(schedule.batch_size, order.size() - cursor);
    std::span<const std::size_t> idx(order.data() + cursor, n);
    cursor += n;

    TrainBatch b = assemble_batch(items, idx, task == TaskKind::ner ? K : 0);
    std::vector<int> mlm_labels;
    if (masks) {
      scratch.clear();
      for (auto i : idx) scratch.push_back(*items[i].packed);
      auto mb = apply_mlm_mask(scratch, ws.corpus->vocab, mask_rng, mask_opts);
      b.ids.clear();
      for (std::size_t r = 0; r < n; ++r) {
        b.ids.insert(b.ids.end(), mb.input_ids[r].begin(), mb.input_ids[r].begin() + static_cast<std::ptrdiff_t>(b.seq));
        mlm_labels.insert(mlm_labels.end(), mb.mlm_labels[r].begin(),
                          mb.mlm_labels[r].begin() + static_cast<std::ptrdiff_t>(b.seq));
      }
      b.mlm_labels = mlm_labels;
    }
    b.num_masked_tokens = static_cast<std::size_t>(std::count(b.ids.begin(), b.ids.end(), Vocab::kMask));
    if (observer) observer(stage, b);

    Tape<float> tape;
    Tensor<float> loss;
    {
      TapeScope<float> scope(tape);
      auto h = encoder_forward<float>(model, b.ids, b.mask, b.batch, true, &dropout_rng);
      switch (objective.kind) {
        case Objective::mlm:
          loss = mlm_loss(mlm_logits(model, h), b.mlm_labels);
          break;
        case Objective::task:
          loss = detail::task_loss(model, h, b, task);
          break;
        case Objective::tsp: {
          Tensor<float> main;
          if (!uses_logits(objective.variant)) {
            main = detail::task_loss(model, h, b, task);
          } else if (task == TaskKind::classification) {
            auto student = cls_logits(model, h);
            main = kl_logits_loss(detail::teacher_tensor(b, student.shape()), student, objective.kl_temperature);
          } else {
            auto student = token_logits(model, h);
            main = token_kl_loss(detail::teacher_tensor(b, student.shape()), student, b.crf_mask,
                                 objective.kl_temperature);
          }
          std::optional<Tensor<float>> mlm;
          if (includes_mlm(objective.variant)) mlm = mlm_loss(mlm_logits(model, h), b.mlm_labels);
          loss = combined_loss(objective.variant, main, mlm);
          break;
        }
      }
      model.zero_grad();
      backward(loss);
    }
    if (!std::isfinite(loss.item())) throw StageError(stage, "non-finite loss at step " + std::to_string(step));
    adam_step(model.params(), adam);
    log.losses.push_back(loss.item());
  }
  log.steps = total;
  return log;
}

// Per-example head outputs from an eval-mode forward pass. Classification:
// [C] logits. NER: [n_text, K] emissions for the characters that fit.
inline std::vector<std::vector<float>> head_outputs(const Model& model, std::span<const PackedExample> packed,
                                                    TaskKind task, std::size_t batch_size) {
  NoGradScope<float> ng;
  std::vector<std::vector<float>> out;
  out.reserve(packed.size());
  std::vector<std::size_t> idx;
  std::vector<TrainItem> items(packed.size());
  for (std::size_t i = 0; i < packed.size(); ++i) items[i].packed = &packed[i];
  for (std::size_t start = 0; start < packed.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, packed.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    auto b = assemble_batch(items, idx, 0);
    auto h = encoder_forward<float>(model, b.ids, b.mask, b.batch, false, nullptr);
    if (task == TaskKind::classification) {
      auto logits = cls_logits(model, h);
      const auto C = logits.dim(1);
      for (std::size_t r = 0; r < n; ++r)
        out.emplace_back(logits.data().begin() + static_cast<std::ptrdiff_t>(r * C),
                         logits.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * C));
    } else {
      auto em = token_logits(model, h);
      const auto K = em.dim(2);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t n_text = packed[start + r].length() - 2;
        const auto* base = em.data().data() + (r * b.seq + 1) * K;
        out.emplace_back(base, base + n_text * K);
      }
    }
  }
  return out;
}

inline int argmax_row(std::span<const float> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline std::vector<int> viterbi_tags(const Model& model, std::span<const float> emissions) {
  if (emissions.empty()) return {};
  return crf_viterbi<float>(emissions, {}, model.crf);
}

// Test-set score: accuracy (classification) or CoNLL span F1 (NER). NER
// predictions for characters beyond max_seq_len are "O".
inline double evaluate_model(const Model& model, const Workspace& ws) {
  const auto& c = *ws.corpus;
  auto outs = head_outputs(model, c.packed_test, ws.task(), ws.config.eval_batch_size);
  if (ws.task() == TaskKind::classification) {
    std::vector<int> pred, gold;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      pred.push_back(argmax_row(outs[i]));
      gold.push_back(c.test[i].label);
    }
    return accuracy(pred, gold);
  }
  std::vector<std::vector<std::string>> pred, gold;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    auto names = c.tagset.names(viterbi_tags(model, outs[i]));
    names.resize(c.test[i].tags.size(), "O");
    pred.push_back(std::move(names));
    gold.push_back(c.test[i].tags);
  }
  return conll_f1(pred, gold);
}

// Gold training items for the first `ws.labeled_size` examples.
inline std::vector<TrainItem> gold_items(const Workspace& ws) {
  const auto labeled = ws.labeled();
  const auto packed = ws.packed_labeled();
  std::vector<TrainItem> items;
  items.reserve(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto& ex = labeled[i];
    if (!ex.is_labeled()) throw ContractError("gold_items: example " + std::to_string(ex.id) + " has no label");
    TrainItem it;
    it.packed = &packed[i];
    it.provenance = ex.provenance;
    it.id = ex.id;
    if (ws.task() == TaskKind::classification) {
      if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= ws.corpus->num_classes)
        throw ContractError("gold_items: label " + std::to_string(ex.label) + " is not a class of this task");
      it.label = ex.label;
    } else {
      if (ex.tags.empty()) {
        if (ex.fields.at(0).empty()) continue;  // nothing to tag
        throw ContractError("gold_items: NER example without tags");
      }
      it.tags = packed[i].tags;
    }
    items.push_back(std::move(it));
  }
  return items;
}

}  // namespace selftrain
