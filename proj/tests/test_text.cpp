// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <map>

#include "selftrain/text/corpus.hpp"
#include "selftrain/text/masking.hpp"
#include "selftrain/text/packing.hpp"
#include "selftrain/text/tags.hpp"
#include "selftrain/text/vocab.hpp"

using namespace selftrain;

namespace {

std::vector<std::string> names(const Vocab& v, const std::vector<int>& ids) {
  std::vector<std::string> out;
  for (int id : ids) out.push_back(v.token(id));
  return out;
}

}  // namespace

TEST_CASE("build_vocab small cases") {
  auto v = build_vocab(std::vector<std::string>{"ab", "ab"}, 1);
  CHECK(v.size() == 7);
  CHECK(v.token(5) == "a");
  CHECK(v.token(6) == "b");
  CHECK(v.token(Vocab::kPad) == "[PAD]");
  CHECK(v.token(Vocab::kMask) == "[MASK]");

  auto reserved_only = build_vocab(std::vector<std::string>{"ab", "c"}, 10);
  CHECK(reserved_only.size() == 5);

  CHECK_THROWS_AS(build_vocab(std::vector<std::string>{}, 1), ContractError);
}

TEST_CASE("build_vocab id order matches an independent frequency sort") {
  Rng rng(17);
  const std::u32string alphabet = U"abcdefghijklmnopqrstuvwxyzé漢字";
  std::vector<std::string> corpus;
  for (int i = 0; i < 1000; ++i) {
    std::string line;
    const auto len = rng.uniform_range(1, 20);
    for (int j = 0; j < len; ++j) {
      // skewed draw so counts differ
      auto k = std::min<std::uint64_t>(rng.uniform_int(alphabet.size()), rng.uniform_int(alphabet.size()));
      line += utf8_encode(alphabet[k]);
    }
    corpus.push_back(line);
  }
  auto v = build_vocab(corpus, 3);

  std::map<char32_t, int> counts;
  for (const auto& l : corpus)
    for (char32_t c : utf8_decode(l)) counts[c]++;
  std::vector<std::pair<int, char32_t>> order;
  for (auto [c, n] : counts)
    if (n >= 3) order.emplace_back(-n, c);
  std::sort(order.begin(), order.end());
  REQUIRE(v.size() == order.size() + 5);
  for (std::size_t i = 0; i < order.size(); ++i) CHECK(v.token(static_cast<int>(i + 5)) == utf8_encode(order[i].second));
}

TEST_CASE("encode then decode is the identity for known characters") {
  auto v = build_vocab(std::vector<std::string>{"héllo wörld", "漢字"}, 1);
  for (std::string s : {"hllo", "wörld 漢", ""}) CHECK(v.decode(v.encode(s)) == s);
  CHECK(v.encode("z")[0] == Vocab::kUnk);
}

TEST_CASE("vocab file round trip") {
  auto v = build_vocab(std::vector<std::string>{"xyz é"}, 1);
  auto path = std::filesystem::temp_directory_path() / "selftrain_vocab.txt";
  v.save(path);
  CHECK(Vocab::load(path) == v);
  std::filesystem::remove(path);
}

TEST_CASE("pack_classification_input layout") {
  auto v = build_vocab(std::vector<std::string>{"abcd"}, 1);
  auto p = pack_classification_input("ab", "c", "d", v, 10);
  CHECK(names(v, p.token_ids) ==
        std::vector<std::string>{"[CLS]", "a", "b", "[SEP]", "c", "[SEP]", "d", "[SEP]", "[PAD]", "[PAD]"});
  CHECK(p.attention_mask == std::vector<int>{1, 1, 1, 1, 1, 1, 1, 1, 0, 0});
  CHECK(p.segment_ids == std::vector<int>(10, 0));

  auto e = pack_classification_input("", "", "", v, 8);
  CHECK(names(v, e.token_ids) ==
        std::vector<std::string>{"[CLS]", "[SEP]", "[SEP]", "[SEP]", "[PAD]", "[PAD]", "[PAD]", "[PAD]"});
  CHECK_THROWS_AS(pack_classification_input("a", "b", "c", v, 7), ContractError);
  CHECK(pack_classification_input("ab", "c", "d", v, 10) == p);
}

TEST_CASE("classification truncation follows the longest-field-first rule") {
  // Oracle: water-filling. The final lengths are min(len_i, L) for the
  // largest level L that fits, and the leftover characters go to the earliest
  // fields that were capped at L.
  auto oracle = [](std::vector<std::size_t> lens, std::size_t budget) {
    std::size_t total = 0;
    for (auto l : lens) total += l;
    if (total <= budget) return lens;
    std::size_t level = 0;
    for (std::size_t L = 0;; ++L) {
      std::size_t s = 0;
      for (auto l : lens) s += std::min(l, L);
      if (s > budget) break;
      level = L;
    }
    std::vector<std::size_t> out;
    std::size_t used = 0;
    for (auto l : lens) out.push_back(std::min(l, level)), used += out.back();
    for (std::size_t i = 0; i < lens.size() && used < budget; ++i)
      if (lens[i] > level) ++out[i], ++used;
    return out;
  };
  Rng rng(4);
  auto v = build_vocab(std::vector<std::string>{"abcdefghij"}, 1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::size_t> lens{rng.uniform_int(30), rng.uniform_int(30), rng.uniform_int(30)};
    const std::size_t max_len = 8 + rng.uniform_int(40);
    auto expect = oracle(lens, max_len - 4);
    CHECK(truncate_field_lengths(lens, max_len - 4) == expect);
    auto mk = [&](std::size_t n, char c) { return std::string(n, c); };
    auto p = pack_classification_input(mk(lens[0], 'a'), mk(lens[1], 'b'), mk(lens[2], 'c'), v, max_len);
    CHECK(p.token_ids.size() == max_len);
    const auto count = [&](char c) {
      return static_cast<std::size_t>(std::count(p.token_ids.begin(), p.token_ids.end(), v.encode(std::string(1, c))[0]));
    };
    CHECK(count('a') == expect[0]);
    CHECK(count('b') == expect[1]);
    CHECK(count('c') == expect[2]);
  }
}

TEST_CASE("pack_ner_input aligns tags and truncates the tail") {
  TagSet ts({"P"});
  auto v = build_vocab(std::vector<std::string>{"abcdef"}, 1);
  auto p = pack_ner_input("ab", std::vector<int>{ts.id("B-P"), ts.id("I-P")}, v, 6);
  CHECK(p.tags == std::vector<int>{kIgnoreTag, ts.id("B-P"), ts.id("I-P"), kIgnoreTag, kIgnoreTag, kIgnoreTag});
  CHECK(names(v, p.token_ids) == std::vector<std::string>{"[CLS]", "a", "b", "[SEP]", "[PAD]", "[PAD]"});

  auto t = pack_ner_input("abcdef", std::vector<int>{0, 1, 2, 0, 1, 2}, v, 5);
  CHECK(names(v, t.token_ids) == std::vector<std::string>{"[CLS]", "a", "b", "c", "[SEP]"});
  CHECK(t.tags == std::vector<int>{kIgnoreTag, 0, 1, 2, kIgnoreTag});

  CHECK_THROWS_AS(pack_ner_input("abc", std::vector<int>{0}, v, 8), DimensionError);
  auto u = pack_ner_input("ab", std::nullopt, v, 6);
  CHECK(u.tags.empty());
}

TEST_CASE("mlm masking with rate zero leaves input untouched") {
  auto v = build_vocab(std::vector<std::string>{"abcdef"}, 1);
  std::vector<PackedExample> batch{pack_classification_input("abc", "de", "f", v, 12)};
  Rng rng(1);
  auto m = apply_mlm_mask(batch, v, rng, {.rate = 0.0});
  CHECK(m.input_ids[0] == batch[0].token_ids);
  CHECK(m.mask_positions[0].empty());
  CHECK(std::all_of(m.mlm_labels[0].begin(), m.mlm_labels[0].end(), [](int l) { return l == kNoMlmLabel; }));
  CHECK_THROWS_AS(apply_mlm_mask(batch, v, rng, {.rate = 1.0}), ContractError);
}

TEST_CASE("mlm masking statistics and reserved positions") {
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  auto v = build_vocab(std::vector<std::string>{alphabet}, 1);
  Rng data_rng(2);
  std::vector<PackedExample> batch;
  std::size_t maskable = 0;
  while (maskable < 120000) {
    std::string text;
    const auto n = data_rng.uniform_range(0, 30);
    for (int i = 0; i < n; ++i) text += alphabet[data_rng.uniform_int(alphabet.size())];
    batch.push_back(pack_ner_input(text, std::nullopt, v, 32));
    maskable += static_cast<std::size_t>(n);
  }
  Rng rng(3);
  auto m = apply_mlm_mask(batch, v, rng);
  std::size_t selected = 0, to_mask = 0, to_random = 0, kept = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t pos = 0; pos < batch[i].token_ids.size(); ++pos) {
      const int orig = batch[i].token_ids[pos];
      const int lab = m.mlm_labels[i][pos];
      if (Vocab::is_reserved(orig)) {
        CHECK(lab == kNoMlmLabel);
        CHECK(m.input_ids[i][pos] == orig);
        continue;
      }
      if (lab == kNoMlmLabel) {
        CHECK(m.input_ids[i][pos] == orig);
        continue;
      }
      CHECK(lab == orig);
      ++selected;
      const int now = m.input_ids[i][pos];
      if (now == Vocab::kMask) ++to_mask;
      else if (now == orig) ++kept;
      else ++to_random;
    }
    CHECK(m.mask_positions[i].size() ==
          static_cast<std::size_t>(std::count_if(m.mlm_labels[i].begin(), m.mlm_labels[i].end(),
                                                 [](int l) { return l != kNoMlmLabel; })));
  }
  const double frac = static_cast<double>(selected) / static_cast<double>(maskable);
  CHECK(std::abs(frac - 0.15) < 0.01);
  const double s = static_cast<double>(selected);
  // a random replacement can redraw the original id (1/26 of the time)
  CHECK(std::abs(to_mask / s - 0.8) < 0.02);
  CHECK(std::abs((to_random + kept) / s - 0.2) < 0.02);
  CHECK(std::abs(kept / s - (0.1 + 0.1 / 26)) < 0.02);
}

TEST_CASE("corpus line formats") {
  auto c = parse_example_line("ab\tc\td\t3", TaskKind::classification, 7);
  CHECK(c.id == 7);
  CHECK(c.fields == std::vector<std::string>{"ab", "c", "d"});
  CHECK(c.label == 3);
  CHECK(c.is_labeled());
  auto u = parse_example_line("ab\tc\td", TaskKind::classification, 0);
  CHECK(u.label == kNoLabel);
  CHECK_FALSE(u.is_labeled());
  CHECK(format_example_line(c, TaskKind::classification, true) == "ab\tc\td\t3");
  CHECK_THROWS_AS(parse_example_line("ab\tc", TaskKind::classification, 0), FormatError);

  auto n = parse_example_line("xé\tB-P I-P", TaskKind::ner, 1);
  CHECK(n.tags == std::vector<std::string>{"B-P", "I-P"});
  CHECK(format_example_line(n, TaskKind::ner, true) == "xé\tB-P I-P");
  CHECK_THROWS_AS(parse_example_line("abc\tO O", TaskKind::ner, 0), FormatError);
}
