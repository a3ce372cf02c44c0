// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "selftrain/core/error.hpp"

namespace selftrain {

// Splits UTF-8 text into code points. Invalid bytes decode to U+FFFD.
inline std::vector<char32_t> utf8_decode(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + static_cast<std::size_t>(len) > s.size()) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    char32_t cp = len == 1 ? c : c & (0xFF >> (len + 1));
    bool ok = true;
    for (int k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    out.push_back(ok ? cp : 0xFFFD);
    i += ok ? static_cast<std::size_t>(len) : 1;
  }
  return out;
}

inline std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

inline std::size_t utf8_length(std::string_view s) { return utf8_decode(s).size(); }

// Character vocabulary. Ids 0..4 are reserved for the special tokens.
class Vocab {
 public:
  static constexpr int kPad = 0, kUnk = 1, kCls = 2, kSep = 3, kMask = 4;
  static constexpr int kNumReserved = 5;

  Vocab() : tokens_{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"} {}

  // Ordered list of tokens; the first five must be the reserved tokens.
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const Vocab reserved;
    if (tokens_.size() < kNumReserved ||
        !std::equal(reserved.tokens_.begin(), reserved.tokens_.end(), tokens_.begin()))
      throw FormatError("vocab: the first five entries must be [PAD] [UNK] [CLS] [SEP] [MASK]");
    for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) {
      auto cps = utf8_decode(tokens_[i]);
      if (cps.size() != 1) throw FormatError("vocab: entry '" + tokens_[i] + "' is not a single character");
      if (!index_.emplace(cps[0], static_cast<int>(i)).second)
        throw FormatError("vocab: duplicate entry '" + tokens_[i] + "'");
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  static bool is_reserved(int id) noexcept { return id >= 0 && id < kNumReserved; }

  int id_of(char32_t cp) const {
    auto it = index_.find(cp);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (char32_t cp : utf8_decode(text)) ids.push_back(id_of(cp));
    return ids;
  }

  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) out += token(id);
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocab load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<std::string> tokens;
    for (std::string line; std::getline(in, line);) tokens.push_back(line);
    return Vocab(std::move(tokens));
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<char32_t, int> index_;
};

// Characters with count >= min_count, ordered by count descending, then code
// point ascending.
template <class Range>
Vocab build_vocab(const Range& corpus, std::size_t min_count) {
  std::map<char32_t, std::size_t> counts;
  std::size_t lines = 0;
  for (const auto& line : corpus) {
    ++lines;
    for (char32_t cp : utf8_decode(line)) ++counts[cp];
  }
  if (lines == 0) throw ContractError("build_vocab: empty corpus");
  std::vector<std::pair<char32_t, std::size_t>> kept;
  for (const auto& [cp, n] : counts)
    if (n >= min_count && cp != U'\n' && cp != U'\t') kept.emplace_back(cp, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (kept.empty()) spdlog::warn("build_vocab: min_count {} leaves only reserved tokens", min_count);
  Vocab reserved;
  std::vector<std::string> tokens = reserved.tokens();
  for (const auto& [cp, n] : kept) tokens.push_back(utf8_encode(cp));
  return Vocab(std::move(tokens));
}

}  // namespace selftrain
