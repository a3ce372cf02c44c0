// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// In-memory examples and the line-oriented corpus files:
//   classification: name \t tag \t poi [\t label]
//   NER:            text [\t space-separated BIO tags]

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "selftrain/core/error.hpp"
#include "selftrain/text/packing.hpp"
#include "selftrain/text/tags.hpp"

namespace selftrain {

enum class TaskKind { classification, ner };

inline const char* to_string(TaskKind k) { return k == TaskKind::classification ? "classification" : "ner"; }

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "ner") return TaskKind::ner;
  throw ConfigError("unknown task '" + s + "' (expected classification or ner)");
}

// Where an example's supervision came from.
enum class Provenance { gold, pseudo, unlabeled };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::gold: return "gold";
    case Provenance::pseudo: return "pseudo";
    default: return "unlabeled";
  }
}

struct Example {
  std::uint64_t id = 0;
  std::vector<std::string> fields;  // {name, tag, poi} or {text}
  int label = kNoLabel;
  std::vector<std::string> tags;  // BIO names; empty when unlabeled
  Provenance provenance = Provenance::unlabeled;

  bool is_labeled() const { return provenance != Provenance::unlabeled; }
  bool operator==(const Example&) const = default;
};

inline std::vector<std::string> split_on(const std::string& line, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!line.empty() && line.back() == sep) parts.emplace_back();
  return parts;
}

inline std::string format_example_line(const Example& ex, TaskKind task, bool with_label) {
  std::string line;
  if (task == TaskKind::classification) {
    line = ex.fields.at(0) + '\t' + ex.fields.at(1) + '\t' + ex.fields.at(2);
    if (with_label && ex.label != kNoLabel) line += '\t' + std::to_string(ex.label);
  } else {
    line = ex.fields.at(0);
    if (with_label && !ex.tags.empty()) {
      line += '\t';
      for (std::size_t i = 0; i < ex.tags.size(); ++i) line += (i ? " " : "") + ex.tags[i];
    }
  }
  return line;
}

inline Example parse_example_line(const std::string& line, TaskKind task, std::uint64_t id) {
  Example ex;
  ex.id = id;
  auto parts = split_on(line, '\t');
  if (task == TaskKind::classification) {
    if (parts.size() != 3 && parts.size() != 4)
      throw FormatError("classification line " + std::to_string(id) + ": expected 3 or 4 TAB-separated fields");
    ex.fields = {parts[0], parts[1], parts[2]};
    if (parts.size() == 4 && !parts[3].empty()) {
      try {
        ex.label = std::stoi(parts[3]);
      } catch (const std::exception&) {
        throw FormatError("classification line " + std::to_string(id) + ": label '" + parts[3] + "' is not an integer");
      }
      ex.provenance = Provenance::gold;
    }
  } else {
    if (parts.empty() || parts.size() > 2)
      throw FormatError("NER line " + std::to_string(id) + ": expected text [TAB tags]");
    ex.fields = {parts[0]};
    if (parts.size() == 2) {
      std::istringstream in(parts[1]);
      for (std::string t; in >> t;) ex.tags.push_back(t);
      if (ex.tags.size() != utf8_length(parts[0]))
        throw FormatError("NER line " + std::to_string(id) + ": tag count does not match character count");
      ex.provenance = Provenance::gold;
    }
  }
  return ex;
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<Example>& examples, TaskKind task,
                         bool with_labels) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& ex : examples) out << format_example_line(ex, task, with_labels) << '\n';
}

inline std::vector<Example> read_corpus(const std::filesystem::path& path, TaskKind task,
                                        std::uint64_t first_id = 0) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<Example> out;
  std::uint64_t id = first_id;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && task == TaskKind::classification) continue;
    out.push_back(parse_example_line(line, task, id++));
  }
  return out;
}

// Packs one example; `tagset` is consulted for NER tags.
inline PackedExample pack_example(const Example& ex, TaskKind task, const Vocab& vocab, const TagSet& tagset,
                                  std::size_t max_len) {
  if (task == TaskKind::classification) {
    auto p = pack_classification_input(ex.fields.at(0), ex.fields.at(1), ex.fields.at(2), vocab, max_len);
    p.label = ex.label;
    return p;
  }
  std::optional<std::vector<int>> tag_ids;
  if (!ex.tags.empty()) tag_ids = tagset.ids(ex.tags);
  return pack_ner_input(ex.fields.at(0), tag_ids, vocab, max_len);
}

// Every character that a corpus contributes to the vocabulary.
inline std::vector<std::string> vocab_lines(const std::vector<Example>& examples) {
  std::vector<std::string> lines;
  lines.reserve(examples.size());
  for (const auto& ex : examples) {
    std::string s;
    for (const auto& f : ex.fields) s += f;
    lines.push_back(std::move(s));
  }
  return lines;
}

}  // namespace selftrain
