// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Markdown tables over MetricsRecords. A cell collects every record that
// matches both its row and its column and shows their mean (over seeds) in
// percent to one decimal. Rows with no matching record at all are omitted.

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selftrain/metrics/metrics.hpp"

namespace selftrain {

struct RowSpec {
  std::string label;
  std::string stage;                          // empty matches any
  std::map<std::string, std::string> variant;  // must be a subset of the record's
};

struct ColumnSpec {
  std::string label;
  std::optional<std::size_t> labeled_size;
  std::string metric;  // empty matches any
};

struct TableOptions {
  std::string corner = "Method";
  bool show_std = false;  // append " ± s" (sample std over seeds)
};

inline constexpr const char* kMissingCell = "—";

namespace detail {

inline bool row_matches(const RowSpec& row, const MetricsRecord& r) {
  if (!row.stage.empty() && row.stage != r.stage) return false;
  for (const auto& [k, v] : row.variant) {
    auto it = r.variant.find(k);
    if (it == r.variant.end() || it->second != v) return false;
  }
  return true;
}

inline bool column_matches(const ColumnSpec& col, const MetricsRecord& r) {
  if (col.labeled_size && *col.labeled_size != r.labeled_size) return false;
  return col.metric.empty() || col.metric == r.metric;
}

inline std::vector<double> cell_values(const std::vector<MetricsRecord>& records, const RowSpec& row,
                                       const ColumnSpec& col) {
  std::vector<double> v;
  for (const auto& r : records)
    if (row_matches(row, r) && column_matches(col, r)) v.push_back(r.value);
  return v;
}

inline std::string fixed1(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", x);
  return buf;
}

inline std::string table_header(const std::string& corner, const std::vector<ColumnSpec>& cols) {
  std::string h = "| " + corner + " |", sep = "|---|";
  for (const auto& c : cols) {
    h += " " + c.label + " |";
    sep += "---|";
  }
  return h + "\n" + sep + "\n";
}

}  // namespace detail

inline std::optional<MeanStd> cell_stats(const std::vector<MetricsRecord>& records, const RowSpec& row,
                                         const ColumnSpec& col) {
  auto v = detail::cell_values(records, row, col);
  if (v.empty()) return std::nullopt;
  return mean_std(v);
}

inline std::string render_ablation_table(const std::vector<MetricsRecord>& records, const std::vector<RowSpec>& rows,
                                         const std::vector<ColumnSpec>& cols, const TableOptions& opts = {}) {
  std::string out = detail::table_header(opts.corner, cols);
  for (const auto& row : rows) {
    std::string line = "| " + row.label + " |";
    bool any = false;
    for (const auto& col : cols) {
      auto s = cell_stats(records, row, col);
      if (!s) {
        line += std::string(" ") + kMissingCell + " |";
        continue;
      }
      any = true;
      line += " " + detail::fixed1(100.0 * s->mean);
      if (opts.show_std) line += " ± " + detail::fixed1(100.0 * s->stddev);
      line += " |";
    }
    if (any) out += line + "\n";
  }
  return out;
}

// Signed percentage-point delta, e.g. "+1.2%".
inline std::string format_delta(double row_value, double baseline_value) {
  double d = 100.0 * (row_value - baseline_value);
  auto s = detail::fixed1(d);
  if (s == "-0.0") s = "0.0";
  return (s[0] == '-' ? "" : "+") + s + "%";
}

inline std::string render_delta_table(const std::vector<MetricsRecord>& records, const RowSpec& baseline,
                                      const std::vector<RowSpec>& rows, const std::vector<ColumnSpec>& cols,
                                      const TableOptions& opts = {}) {
  std::vector<double> base;
  for (const auto& col : cols) {
    auto s = cell_stats(records, baseline, col);
    if (!s) throw ContractError("render_delta_table: baseline '" + baseline.label + "' has no value for column '" +
                                col.label + "'");
    base.push_back(s->mean);
  }
  std::string out = detail::table_header(opts.corner, cols);
  out += "| " + baseline.label + " |";
  for (std::size_t i = 0; i < cols.size(); ++i) out += std::string(" ") + kMissingCell + " |";
  out += "\n";
  for (const auto& row : rows) {
    std::string line = "| " + row.label + " |";
    bool any = false;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      auto s = cell_stats(records, row, cols[i]);
      if (!s) {
        line += std::string(" ") + kMissingCell + " |";
        continue;
      }
      any = true;
      line += " " + format_delta(s->mean, base[i]) + " |";
    }
    if (any) out += line + "\n";
  }
  return out;
}

// One row per distinct (stage, variant) in first-appearance order, labelled
// "stage key=value ...".
inline std::vector<RowSpec> rows_from_records(const std::vector<MetricsRecord>& records) {
  std::vector<RowSpec> rows;
  for (const auto& r : records) {
    const bool seen = std::any_of(rows.begin(), rows.end(), [&](const RowSpec& row) {
      return row.stage == r.stage && row.variant == r.variant;
    });
    if (seen) continue;
    std::string label = r.stage;
    for (const auto& [k, v] : r.variant) label += " " + k + "=" + v;
    rows.push_back({label, r.stage, r.variant});
  }
  return rows;
}

// One column per labeled-set size, ascending.
inline std::vector<ColumnSpec> columns_from_records(const std::vector<MetricsRecord>& records) {
  std::map<std::size_t, std::string> sizes;
  for (const auto& r : records) sizes.emplace(r.labeled_size, r.metric);
  std::vector<ColumnSpec> cols;
  for (const auto& [n, metric] : sizes) cols.push_back({"l=" + std::to_string(n), n, metric});
  return cols;
}

}  // namespace selftrain
