// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "selftrain/model/encoder.hpp"

namespace selftrain::testing {

// 64-bit model with a large init scale so that every parameter carries a
// gradient well above the finite-difference noise floor.
inline EncoderModel<double> tiny_model(std::size_t layers, std::size_t hidden, std::size_t heads,
                                       std::uint64_t seed, double init_std = 0.5) {
  EncoderConfig c;
  c.num_layers = layers;
  c.hidden = hidden;
  c.heads = heads;
  c.ffn_mult = 2;
  c.max_seq_len = 6;
  c.vocab_size = 11;
  c.num_classes = 3;
  c.num_tags = 3;
  c.dropout = 0.1;
  c.init_std = init_std;
  auto m = init_model<double>(c, seed);
  // give biases, gains and CRF scores non-trivial values too
  Rng rng(seed + 1);
  for (auto& p : m.params())
    if (!p.name.ends_with(".w") && !p.name.starts_with("embeddings.token") &&
        !p.name.starts_with("embeddings.position"))
      for (auto& v : p.tensor.data()) v += 0.3 * rng.normal();
  return m;
}

struct TinyBatch {
  std::size_t batch = 2, seq = 6;
  std::vector<int> ids{2, 5, 7, 3, 0, 0, 2, 9, 6, 10, 8, 3};
  std::vector<int> mask{1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1};
};

}  // namespace selftrain::testing
