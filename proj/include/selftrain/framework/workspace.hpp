// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Loaded corpora, vocabulary and packed inputs for one pipeline config, plus
// the batch assembly shared by every training stage.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <vector>

#include "selftrain/data/synth.hpp"
#include "selftrain/framework/config.hpp"
#include "selftrain/text/packing.hpp"
#include "selftrain/text/vocab.hpp"

namespace selftrain {

struct Corpus {
  TaskKind task = TaskKind::classification;
  std::vector<Example> train, test, pool;
  Vocab vocab;
  TagSet tagset;
  std::size_t num_classes = 0;
  std::vector<PackedExample> packed_train, packed_test, packed_pool;
};

// Inputs that determine the corpus (and so the vocabulary).
inline nlohmann::json data_descriptor(const PipelineConfig& c) {
  nlohmann::json j;
  j["task"] = c.task;
  j["max_seq_len"] = c.encoder.max_seq_len;
  j["vocab_min_count"] = c.data.vocab_min_count;
  if (c.data.from_files()) {
    for (const auto& [key, path] : {std::pair{"train", c.data.train_path}, std::pair{"test", c.data.test_path},
                                    std::pair{"pool", c.data.pool_path}})
      j["files"][key] = sha256_hex(read_file_bytes(path));
  } else {
    auto g = c.data.generator;
    g.seed = c.data.data_seed >= 0 ? static_cast<std::uint64_t>(c.data.data_seed) : c.seed;
    j["generator"] = g;
  }
  return j;
}

inline std::shared_ptr<const Corpus> load_corpus(const PipelineConfig& c) {
  auto corpus = std::make_shared<Corpus>();
  corpus->task = c.task;
  if (c.data.from_files()) {
    corpus->train = read_corpus(c.data.train_path, c.task, synth_example_id(Split::train, 0));
    corpus->test = read_corpus(c.data.test_path, c.task, synth_example_id(Split::test, 0));
    corpus->pool = read_corpus(c.data.pool_path, c.task, synth_example_id(Split::pool, 0));
    for (auto& ex : corpus->pool) ex = strip_labels(ex);
    for (const auto* part : {&corpus->train, &corpus->test})
      for (const auto& ex : *part)
        if (!ex.is_labeled()) throw FormatError("data: example " + std::to_string(ex.id) + " has no gold label");
  } else {
    auto g = c.data.generator;
    g.seed = c.data.data_seed >= 0 ? static_cast<std::uint64_t>(c.data.data_seed) : c.seed;
    auto s = generate_corpus(c.task, g);
    corpus->train = std::move(s.train);
    corpus->test = std::move(s.test);
    corpus->pool = std::move(s.pool);
  }
  if (corpus->train.empty() || corpus->test.empty() || corpus->pool.empty())
    throw ContractError("data: train, test and pool must all be non-empty");

  std::vector<std::string> lines = vocab_lines(corpus->train);
  auto pool_lines = vocab_lines(corpus->pool);
  lines.insert(lines.end(), pool_lines.begin(), pool_lines.end());
  corpus->vocab = build_vocab(lines, c.data.vocab_min_count);

  if (c.task == TaskKind::classification) {
    int max_label = -1;
    for (const auto* part : {&corpus->train, &corpus->test})
      for (const auto& ex : *part) max_label = std::max(max_label, ex.label);
    corpus->num_classes = c.data.from_files() ? static_cast<std::size_t>(max_label + 1) : c.data.generator.num_classes;
  } else {
    std::set<std::string> types;
    for (const auto* part : {&corpus->train, &corpus->test})
      for (const auto& ex : *part)
        for (const auto& t : ex.tags)
          if (t.size() > 2 && (t[0] == 'B' || t[0] == 'I') && t[1] == '-') types.insert(t.substr(2));
    corpus->tagset = TagSet(std::vector<std::string>(types.begin(), types.end()));
  }
  const auto L = c.encoder.max_seq_len;
  for (const auto& ex : corpus->train) corpus->packed_train.push_back(pack_example(ex, c.task, corpus->vocab, corpus->tagset, L));
  for (const auto& ex : corpus->test) corpus->packed_test.push_back(pack_example(ex, c.task, corpus->vocab, corpus->tagset, L));
  for (const auto& ex : corpus->pool) corpus->packed_pool.push_back(pack_example(ex, c.task, corpus->vocab, corpus->tagset, L));
  spdlog::info("data: {} train / {} test / {} pool examples, vocab {}", corpus->train.size(), corpus->test.size(),
               corpus->pool.size(), corpus->vocab.size());
  return corpus;
}

// A corpus plus the labeled-size view and the resolved encoder config.
struct Workspace {
  PipelineConfig config;
  std::shared_ptr<const Corpus> corpus;
  std::size_t labeled_size = 0;
  EncoderConfig encoder;
  nlohmann::json data_key;

  TaskKind task() const { return config.task; }
  std::span<const Example> labeled() const { return std::span(corpus->train).first(labeled_size); }
  std::span<const PackedExample> packed_labeled() const { return std::span(corpus->packed_train).first(labeled_size); }
  std::size_t num_outputs() const {
    return task() == TaskKind::classification ? corpus->num_classes : corpus->tagset.size();
  }
};

inline Workspace make_workspace(const PipelineConfig& c, std::shared_ptr<const Corpus> corpus, nlohmann::json data_key) {
  Workspace w;
  w.config = c;
  w.corpus = std::move(corpus);
  w.data_key = std::move(data_key);
  w.labeled_size = c.labeled_size ? c.labeled_size : w.corpus->train.size();
  if (w.labeled_size > w.corpus->train.size())
    throw ConfigError("labeled_size " + std::to_string(w.labeled_size) + " exceeds the " +
                      std::to_string(w.corpus->train.size()) + " labeled training examples");
  w.encoder = c.encoder;
  w.encoder.vocab_size = w.corpus->vocab.size();
  if (c.task == TaskKind::classification) w.encoder.num_classes = w.corpus->num_classes;
  else w.encoder.num_tags = w.corpus->tagset.size();
  w.encoder.validate();
  return w;
}

// One training example as seen by the trainer.
struct TrainItem {
  const PackedExample* packed = nullptr;
  Provenance provenance = Provenance::gold;
  std::uint64_t id = 0;
  int label = kNoLabel;               // classification target
  std::vector<int> tags;              // NER target in packed layout (kIgnoreTag outside the text)
  std::vector<float> teacher_logits;  // [C] or [max_len * K] in packed layout
};

struct TrainBatch {
  std::size_t batch = 0, seq = 0;
  std::vector<int> ids, mask, labels, tags, crf_mask;
  std::vector<float> teacher_logits;
  std::vector<Provenance> provenance;
  std::vector<std::uint64_t> example_ids;
  std::size_t num_masked_tokens = 0;  // [MASK] ids present in `ids`
  std::vector<int> mlm_labels;        // filled when the stage masks its input
};

// Gathers `index` into a batch trimmed to its longest real sequence.
inline TrainBatch assemble_batch(std::span<const TrainItem> items, std::span<const std::size_t> index,
                                 std::size_t logits_per_position) {
  TrainBatch b;
  b.batch = index.size();
  for (auto i : index) b.seq = std::max(b.seq, items[i].packed->length());
  for (auto i : index) {
    const auto& it = items[i];
    const auto& p = *it.packed;
    b.ids.insert(b.ids.end(), p.token_ids.begin(), p.token_ids.begin() + static_cast<std::ptrdiff_t>(b.seq));
    b.mask.insert(b.mask.end(), p.attention_mask.begin(), p.attention_mask.begin() + static_cast<std::ptrdiff_t>(b.seq));
    b.labels.push_back(it.label);
    if (!it.tags.empty())
      for (std::size_t s = 0; s < b.seq; ++s) {
        b.tags.push_back(it.tags[s] == kIgnoreTag ? 0 : it.tags[s]);
        b.crf_mask.push_back(it.tags[s] == kIgnoreTag ? 0 : 1);
      }
    if (!it.teacher_logits.empty()) {
      const std::size_t n = logits_per_position ? b.seq * logits_per_position : it.teacher_logits.size();
      b.teacher_logits.insert(b.teacher_logits.end(), it.teacher_logits.begin(),
                              it.teacher_logits.begin() + static_cast<std::ptrdiff_t>(n));
    }
    b.provenance.push_back(it.provenance);
    b.example_ids.push_back(it.id);
  }
  return b;
}

}  // namespace selftrain
