// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "selftrain/framework/trainer.hpp"

namespace selftrain {

// Teacher prediction for one pool example. Classification: `label` and a
// [C] logit vector. NER: `tags` and [rows, K] emissions (rows = characters
// the teacher saw; fields[0] is cut to that length).
struct PseudoLabelRecord {
  std::uint64_t id = 0;
  std::vector<std::string> fields;
  int label = kNoLabel;
  std::vector<std::string> tags;
  std::vector<float> logits;
  std::size_t rows = 1, cols = 0;
  double confidence = 0;
  bool operator==(const PseudoLabelRecord&) const = default;
};

// max softmax probability of each row
inline std::vector<double> row_max_probs(std::span<const float> logits, std::size_t cols) {
  std::vector<double> out;
  for (std::size_t r = 0; r * cols < logits.size(); ++r) {
    const auto row = logits.subspan(r * cols, cols);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (float v : row) z += std::exp(static_cast<double>(v) - mx);
    out.push_back(1.0 / z);
  }
  return out;
}

// Classification: max softmax probability. NER: mean (or min) over tokens of
// the per-token max probability; an empty sentence has confidence 1.
inline double record_confidence(std::span<const float> logits, std::size_t cols, const std::string& mode) {
  const auto p = row_max_probs(logits, cols);
  if (p.empty()) return 1.0;
  if (mode == "min") return *std::min_element(p.begin(), p.end());
  double s = 0;
  for (double v : p) s += v;
  return s / static_cast<double>(p.size());
}

inline std::vector<PseudoLabelRecord> pseudo_label(const Model& teacher, const Workspace& ws,
                                                   std::span<const Example> pool,
                                                   std::span<const PackedExample> packed_pool) {
  const TaskKind task = ws.task();
  auto outs = head_outputs(teacher, packed_pool, task, ws.config.eval_batch_size);
  std::vector<PseudoLabelRecord> records;
  records.reserve(outs.size());
  for (std::size_t i = 0; i < outs.size(); ++i) {
    PseudoLabelRecord r;
    r.id = pool[i].id;
    r.fields = pool[i].fields;
    r.logits = std::move(outs[i]);
    if (task == TaskKind::classification) {
      r.cols = ws.corpus->num_classes;
      r.rows = 1;
      r.label = argmax_row(r.logits);
      r.confidence = record_confidence(r.logits, r.cols, "mean");
    } else {
      r.cols = ws.corpus->tagset.size();
      r.rows = r.logits.size() / r.cols;
      r.tags = ws.corpus->tagset.names(viterbi_tags(teacher, r.logits));
      auto cps = utf8_decode(r.fields[0]);
      if (cps.size() > r.rows) {
        std::string cut;
        for (std::size_t k = 0; k < r.rows; ++k) cut += utf8_encode(cps[k]);
        r.fields[0] = cut;
      }
      r.confidence = record_confidence(r.logits, r.cols, ws.config.self_training.confidence);
    }
    records.push_back(std::move(r));
  }
  return records;
}

inline nlohmann::json record_to_json(const PseudoLabelRecord& r, TaskKind task) {
  nlohmann::json j;
  j["id"] = r.id;
  j["fields"] = r.fields;
  if (task == TaskKind::classification) {
    j["label"] = r.label;
    j["logits"] = r.logits;
  } else {
    j["label"] = r.tags;
    auto rows = nlohmann::json::array();
    for (std::size_t i = 0; i < r.rows; ++i)
      rows.push_back(std::vector<float>(r.logits.begin() + static_cast<std::ptrdiff_t>(i * r.cols),
                                        r.logits.begin() + static_cast<std::ptrdiff_t>((i + 1) * r.cols)));
    j["logits"] = rows;
  }
  j["confidence"] = r.confidence;
  return j;
}

inline PseudoLabelRecord record_from_json(const nlohmann::json& j, TaskKind task, std::size_t cols) {
  PseudoLabelRecord r;
  r.id = j.at("id").get<std::uint64_t>();
  r.fields = j.at("fields").get<std::vector<std::string>>();
  r.confidence = j.at("confidence").get<double>();
  r.cols = cols;
  if (task == TaskKind::classification) {
    r.label = j.at("label").get<int>();
    r.logits = j.at("logits").get<std::vector<float>>();
    r.rows = 1;
  } else {
    r.tags = j.at("label").get<std::vector<std::string>>();
    const auto rows = j.at("logits").get<std::vector<std::vector<float>>>();
    r.rows = rows.size();
    for (const auto& row : rows) r.logits.insert(r.logits.end(), row.begin(), row.end());
  }
  return r;
}

inline void write_pseudo_jsonl(const std::filesystem::path& path, const std::vector<PseudoLabelRecord>& records,
                               TaskKind task) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r, task).dump() << '\n';
}

inline std::vector<PseudoLabelRecord> read_pseudo_jsonl(const std::filesystem::path& path, TaskKind task,
                                                        std::size_t cols) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<PseudoLabelRecord> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line), task, cols));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// Records with confidence >= tau, grouped by label (NER: one group), each
// group shuffled with `rng` in ascending label order and cut to `cap`.
// Returns record indices in ascending order.
inline std::vector<std::size_t> select_confident(const std::vector<PseudoLabelRecord>& records, double tau,
                                                 std::size_t cap, TaskKind task, Rng& rng) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].confidence >= tau) groups[task == TaskKind::classification ? records[i].label : 0].push_back(i);
  std::vector<std::size_t> out;
  for (auto& [label, members] : groups) {
    rng.shuffle(members);
    members.resize(std::min(members.size(), cap));
    out.insert(out.end(), members.begin(), members.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// cap = per_class_cap, or ceil(target / groups) with target = sample_size or
// the number of qualifying records.
inline std::size_t resolve_per_class_cap(const SelfTrainingConfig& st, std::size_t qualifying, std::size_t groups) {
  if (st.per_class_cap) return st.per_class_cap;
  const std::size_t target = st.sample_size ? st.sample_size : qualifying;
  return (target + groups - 1) / std::max<std::size_t>(groups, 1);
}

// Packs records into training items: the label/tags as one-hot targets and
// the logits laid out like the packed input.
// Items point into `packed`, so the struct is move-only.
struct PseudoItems {
  std::vector<PackedExample> packed;
  std::vector<TrainItem> items;

  PseudoItems() = default;
  PseudoItems(PseudoItems&&) noexcept = default;
  PseudoItems& operator=(PseudoItems&&) noexcept = default;
  PseudoItems(const PseudoItems&) = delete;
  PseudoItems& operator=(const PseudoItems&) = delete;
};

inline PseudoItems pseudo_items(const std::vector<PseudoLabelRecord>& records, std::span<const std::size_t> which,
                                const Workspace& ws) {
  PseudoItems out;
  const auto L = ws.encoder.max_seq_len;
  const auto& c = *ws.corpus;
  out.packed.reserve(which.size());
  for (auto i : which) {
    const auto& r = records[i];
    if (ws.task() == TaskKind::classification) {
      auto p = pack_classification_input(r.fields.at(0), r.fields.at(1), r.fields.at(2), c.vocab, L);
      p.label = r.label;
      out.packed.push_back(std::move(p));
    } else {
      out.packed.push_back(pack_ner_input(r.fields.at(0), c.tagset.ids(r.tags), c.vocab, L));
    }
  }
  out.items.reserve(which.size());
  for (std::size_t k = 0; k < which.size(); ++k) {
    const auto& r = records[which[k]];
    // a CRF needs at least one position
    if (ws.task() == TaskKind::ner && r.rows == 0) continue;
    TrainItem it;
    it.packed = &out.packed[k];
    it.provenance = Provenance::pseudo;
    it.id = r.id;
    if (ws.task() == TaskKind::classification) {
      it.label = r.label;
      it.teacher_logits = r.logits;
    } else {
      it.tags = out.packed[k].tags;
      it.teacher_logits.assign(L * r.cols, 0.0f);
      std::copy(r.logits.begin(), r.logits.end(), it.teacher_logits.begin() + static_cast<std::ptrdiff_t>(r.cols));
    }
    out.items.push_back(std::move(it));
  }
  return out;
}

}  // namespace selftrain
