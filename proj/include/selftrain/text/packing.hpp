// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "selftrain/core/error.hpp"
#include "selftrain/text/vocab.hpp"

namespace selftrain {

// Tag value at [CLS], [SEP] and padding positions; such positions never enter
// the tagging loss.
inline constexpr int kIgnoreTag = -1;
inline constexpr int kNoLabel = -1;

struct PackedExample {
  std::vector<int> token_ids;
  std::vector<int> attention_mask;
  std::vector<int> segment_ids;
  int label = kNoLabel;   // classification payload
  std::vector<int> tags;  // NER payload, kIgnoreTag outside the text

  std::size_t length() const {
    std::size_t n = 0;
    for (int m : attention_mask) n += static_cast<std::size_t>(m);
    return n;
  }
  bool operator==(const PackedExample&) const = default;
};

// Shrinks field lengths until they fit `budget`, one character at a time from
// the currently longest field. Ties go to the later field, so the name field
// (first) is cut last.
inline std::vector<std::size_t> truncate_field_lengths(std::vector<std::size_t> lens,
                                                       std::size_t budget) {
  std::size_t total = 0;
  for (auto l : lens) total += l;
  while (total > budget) {
    std::size_t pick = 0;
    for (std::size_t i = 1; i < lens.size(); ++i)
      if (lens[i] >= lens[pick]) pick = i;
    --lens[pick];
    --total;
  }
  return lens;
}

namespace detail {

inline void pad_to(PackedExample& ex, std::size_t max_len, bool with_tags) {
  ex.attention_mask.assign(ex.token_ids.size(), 1);
  while (ex.token_ids.size() < max_len) {
    ex.token_ids.push_back(Vocab::kPad);
    ex.attention_mask.push_back(0);
    if (with_tags) ex.tags.push_back(kIgnoreTag);
  }
  ex.segment_ids.assign(max_len, 0);
}

}  // namespace detail

// [CLS] name [SEP] tag [SEP] poi [SEP] [PAD]...
inline PackedExample pack_classification_input(const std::string& name, const std::string& tag,
                                               const std::string& poi, const Vocab& vocab,
                                               std::size_t max_len) {
  if (max_len < 8) throw ContractError("pack_classification_input: max_len must be >= 8");
  const std::array<std::vector<int>, 3> fields{vocab.encode(name), vocab.encode(tag), vocab.encode(poi)};
  const auto lens = truncate_field_lengths({fields[0].size(), fields[1].size(), fields[2].size()},
                                           max_len - 4);
  PackedExample ex;
  ex.token_ids.reserve(max_len);
  ex.token_ids.push_back(Vocab::kCls);
  for (std::size_t f = 0; f < 3; ++f) {
    ex.token_ids.insert(ex.token_ids.end(), fields[f].begin(),
                        fields[f].begin() + static_cast<std::ptrdiff_t>(lens[f]));
    ex.token_ids.push_back(Vocab::kSep);
  }
  detail::pad_to(ex, max_len, false);
  return ex;
}

// [CLS] text [SEP] [PAD]...; tags (ids) aligned to characters, text beyond
// max_len - 2 characters is dropped together with its tags.
inline PackedExample pack_ner_input(const std::string& text, const std::optional<std::vector<int>>& tags,
                                    const Vocab& vocab, std::size_t max_len) {
  if (max_len < 3) throw ContractError("pack_ner_input: max_len must be >= 3");
  auto ids = vocab.encode(text);
  if (tags && tags->size() != ids.size())
    throw DimensionError("pack_ner_input: " + std::to_string(tags->size()) + " tags for " +
                         std::to_string(ids.size()) + " characters");
  const std::size_t keep = std::min(ids.size(), max_len - 2);
  PackedExample ex;
  ex.token_ids.push_back(Vocab::kCls);
  ex.token_ids.insert(ex.token_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep));
  ex.token_ids.push_back(Vocab::kSep);
  if (tags) {
    ex.tags.push_back(kIgnoreTag);
    ex.tags.insert(ex.tags.end(), tags->begin(), tags->begin() + static_cast<std::ptrdiff_t>(keep));
    ex.tags.push_back(kIgnoreTag);
  }
  detail::pad_to(ex, max_len, tags.has_value());
  return ex;
}

}  // namespace selftrain
