// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "selftrain/core/error.hpp"

namespace selftrain {

inline double accuracy(std::span<const int> predictions, std::span<const int> gold) {
  if (predictions.size() != gold.size())
    throw DimensionError("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(gold.size()) + " gold labels");
  if (gold.empty()) throw ContractError("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += predictions[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

struct Span {
  std::string type;
  std::size_t start = 0, end = 0;  // inclusive
  auto operator<=>(const Span&) const = default;
};

// Maximal (type, start, end) units of a BIO sequence. A stray I-X (not
// continuing an open X span) opens a new span unless `strict`, in which case
// it is dropped. Unknown tags count as O.
inline std::vector<Span> extract_spans(const std::vector<std::string>& tags, bool strict = false) {
  std::vector<Span> spans;
  bool open = false;
  Span cur;
  auto close = [&] {
    if (open) spans.push_back(cur);
    open = false;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto& t = tags[i];
    const bool is_b = t.rfind("B-", 0) == 0, is_i = t.rfind("I-", 0) == 0;
    if (is_i && open && cur.type == t.substr(2)) {
      cur.end = i;
      continue;
    }
    close();
    if (is_b || (is_i && !strict)) {
      cur = {t.substr(2), i, i};
      open = true;
    }
  }
  close();
  return spans;
}

struct SpanScores {
  std::size_t true_positives = 0, predicted = 0, gold = 0;
  double precision = 0, recall = 0, f1 = 0;
};

// Micro-averaged CoNLL span scores over all sequences. No predicted and no
// gold spans scores F1 = 1.
inline SpanScores conll_scores(const std::vector<std::vector<std::string>>& pred,
                               const std::vector<std::vector<std::string>>& gold, bool strict = false) {
  if (pred.size() != gold.size())
    throw DimensionError("conll_f1: " + std::to_string(pred.size()) + " predicted sequences for " +
                         std::to_string(gold.size()) + " gold sequences");
  SpanScores s;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (pred[i].size() != gold[i].size())
      throw DimensionError("conll_f1: sequence " + std::to_string(i) + " has " + std::to_string(pred[i].size()) +
                           " predicted tags for " + std::to_string(gold[i].size()) + " gold tags");
    const auto p = extract_spans(pred[i], strict);
    const auto g = extract_spans(gold[i], strict);
    const std::set<Span> gs(g.begin(), g.end());
    for (const auto& sp : p) s.true_positives += gs.count(sp);
    s.predicted += p.size();
    s.gold += g.size();
  }
  if (s.predicted == 0 && s.gold == 0) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  s.precision = s.predicted ? static_cast<double>(s.true_positives) / static_cast<double>(s.predicted) : 0.0;
  s.recall = s.gold ? static_cast<double>(s.true_positives) / static_cast<double>(s.gold) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

inline double conll_f1(const std::vector<std::vector<std::string>>& pred,
                       const std::vector<std::vector<std::string>>& gold, bool strict = false) {
  return conll_scores(pred, gold, strict).f1;
}

struct MetricsRecord {
  std::string run_id;
  std::string stage;                          // A, B, C, D, baseline, classic-ST, ...
  std::map<std::string, std::string> variant;  // descriptors such as loss/input/base
  std::size_t labeled_size = 0;
  std::string metric;  // accuracy | span_f1
  double value = 0;
  std::uint64_t seed = 0;
  std::string timestamp;

  void validate() const {
    if (!(value >= 0.0 && value <= 1.0))
      throw ContractError("metrics record " + run_id + ": value " + std::to_string(value) + " outside [0, 1]");
  }
  bool operator==(const MetricsRecord&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MetricsRecord, run_id, stage, variant, labeled_size, metric, value,
                                                seed, timestamp)

inline void append_metrics_jsonl(const std::filesystem::path& path, const MetricsRecord& r) {
  r.validate();
  std::ofstream out(path, std::ios::app);
  if (!out) throw FormatError("cannot append to " + path.string());
  out << nlohmann::json(r).dump() << '\n';
}

inline std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<MetricsRecord> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<MetricsRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct MeanStd {
  double mean = 0, stddev = 0;  // sample standard deviation (n - 1)
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  r.n = v.size();
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

}  // namespace selftrain
