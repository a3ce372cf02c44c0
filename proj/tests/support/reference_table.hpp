// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Published reference results: accuracy at three labeled-set sizes, then
// NER F1, one row per method.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/metrics/report.hpp"

namespace selftrain::testing {

inline std::vector<MetricsRecord> reference_records() {
  const std::vector<std::pair<std::string, std::array<double, 4>>> rows{
      {"baseline-3", {87.0, 89.2, 90.8, 88.6}}, {"baseline-12", {87.5, 89.4, 91.0, 88.7}},
      {"classic-base", {88.0, 89.8, 91.0, 89.0}}, {"B", {88.2, 90.1, 91.7, 88.8}},
      {"classic-A", {89.3, 90.4, 91.6, 89.2}},    {"classic-C", {90.2, 90.9, 91.7, 89.4}},
      {"D", {90.6, 91.1, 91.9, 89.6}}};
  const std::array<std::size_t, 4> sizes{100000, 400000, 2000000, 0};
  std::vector<MetricsRecord> out;
  for (const auto& [stage, vals] : rows)
    for (std::size_t i = 0; i < 4; ++i) {
      MetricsRecord r;
      r.run_id = stage + "-" + std::to_string(i);
      r.stage = stage;
      r.labeled_size = sizes[i];
      r.metric = i == 3 ? "span_f1" : "accuracy";
      r.value = vals[i] / 100.0;
      out.push_back(r);
    }
  return out;
}

inline std::vector<RowSpec> reference_rows() {
  return {{"Fine-tune only, 3 layers", "baseline-3", {}},
          {"Fine-tune only, 12 layers", "baseline-12", {}},
          {"Classic ST upon base", "classic-base", {}},
          {"Model-B", "B", {}},
          {"Classic ST upon Model-A", "classic-A", {}},
          {"Classic ST upon Model-C", "classic-C", {}},
          {"Model-D", "D", {}}};
}

inline std::vector<ColumnSpec> reference_cols() {
  return {{"100K data", 100000, "accuracy"},
          {"400K data", 400000, "accuracy"},
          {"2000K data", 2000000, "accuracy"},
          {"Test F1", std::nullopt, "span_f1"}};
}

}  // namespace selftrain::testing
