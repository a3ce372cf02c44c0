// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "selftrain/core/rng.hpp"
#include "selftrain/text/packing.hpp"

namespace selftrain {

inline constexpr int kNoMlmLabel = -1;

struct MaskOptions {
  double rate = 0.15;
  // Of the selected positions: this share becomes [MASK], random_token_prob
  // becomes a random character, and the remainder keeps its token.
  double mask_token_prob = 0.8;
  double random_token_prob = 0.1;
  bool operator==(const MaskOptions&) const = default;
};

struct MaskedBatch {
  std::vector<std::vector<int>> input_ids;
  std::vector<std::vector<int>> mlm_labels;  // original id where selected, else kNoMlmLabel
  std::vector<std::vector<std::size_t>> mask_positions;
};

// Independently selects each real, non-reserved position with probability
// `rate`. Call once per epoch/batch for dynamic masking.
inline MaskedBatch apply_mlm_mask(std::span<const PackedExample> batch, const Vocab& vocab, Rng& rng,
                                  const MaskOptions& opts = {}) {
  if (!(opts.rate >= 0.0 && opts.rate < 1.0)) throw ContractError("apply_mlm_mask: rate must lie in [0, 1)");
  const auto vocab_size = static_cast<std::int64_t>(vocab.size());
  MaskedBatch out;
  out.input_ids.reserve(batch.size());
  out.mlm_labels.reserve(batch.size());
  out.mask_positions.reserve(batch.size());
  for (const auto& ex : batch) {
    auto ids = ex.token_ids;
    std::vector<int> labels(ids.size(), kNoMlmLabel);
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!ex.attention_mask[i] || Vocab::is_reserved(ids[i])) continue;
      if (!rng.bernoulli(opts.rate)) continue;
      labels[i] = ids[i];
      positions.push_back(i);
      const double r = rng.uniform();
      if (r < opts.mask_token_prob) {
        ids[i] = Vocab::kMask;
      } else if (r < opts.mask_token_prob + opts.random_token_prob) {
        if (vocab_size > Vocab::kNumReserved)
          ids[i] = static_cast<int>(rng.uniform_range(Vocab::kNumReserved, vocab_size - 1));
      }
    }
    out.input_ids.push_back(std::move(ids));
    out.mlm_labels.push_back(std::move(labels));
    out.mask_positions.push_back(std::move(positions));
  }
  return out;
}

}  // namespace selftrain
