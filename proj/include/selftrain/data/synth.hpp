// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Seeded synthetic corpora. Every example is generated from its own derived
// RNG stream keyed by (seed, split, index), so a smaller labeled set is a
// prefix of a larger one and the pool/test sets do not depend on the
// labeled size.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "selftrain/core/error.hpp"
#include "selftrain/core/rng.hpp"
#include "selftrain/text/corpus.hpp"
#include "selftrain/text/tags.hpp"

namespace selftrain {

struct LengthRange {
  std::size_t min = 1, max = 1;
  bool operator==(const LengthRange&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LengthRange, min, max)

struct GeneratorSpec {
  std::uint64_t seed = 0;
  std::size_t num_classes = 8;
  std::size_t alphabet_size = 60;
  // Class signal: each class owns `motifs_per_class` name motifs with
  // Zipf-like frequencies 1, 1/2, 1/3, ...
  std::size_t motifs_per_class = 4;
  std::size_t motif_length = 3;
  double noise = 0.1;  // probability that the label is redrawn uniformly
  // Weaker correlated 2-symbol motifs in the other two fields.
  double tag_signal = 0.6;
  double poi_signal = 0.3;
  LengthRange name_length{6, 12};
  LengthRange tag_length{2, 5};
  LengthRange poi_length{4, 9};
  // NER
  std::vector<std::string> entity_types{"BRAND", "SPEC"};
  std::size_t words_per_type = 24;
  LengthRange word_length{2, 4};
  LengthRange filler_length{1, 4};
  std::vector<double> span_count_probs{0.25, 0.35, 0.25, 0.15};  // P(0..3 spans)
  // sizes
  std::size_t labeled_train = 10000;
  std::size_t test = 5000;
  std::size_t unlabeled_pool = 50000;

  void validate() const {
    auto range_ok = [](const LengthRange& r) { return r.min <= r.max; };
    if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
    if (alphabet_size < 4 || alphabet_size > 62) throw ConfigError("synth: alphabet_size must lie in [4, 62]");
    if (motifs_per_class < 1 || motif_length < 2) throw ConfigError("synth: motifs need length >= 2");
    if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("synth: noise must lie in [0, 1]");
    if (!(tag_signal >= 0.0 && tag_signal <= 1.0 && poi_signal >= 0.0 && poi_signal <= 1.0))
      throw ConfigError("synth: field signal probabilities must lie in [0, 1]");
    if (!range_ok(name_length) || !range_ok(tag_length) || !range_ok(poi_length) || !range_ok(word_length) ||
        !range_ok(filler_length))
      throw ConfigError("synth: length ranges need min <= max");
    if (name_length.max < motif_length) throw ConfigError("synth: name_length.max must fit a motif");
    if (word_length.min < 1) throw ConfigError("synth: word_length.min must be >= 1");
    if (entity_types.empty()) throw ConfigError("synth: entity_types must not be empty");
    if (span_count_probs.empty()) throw ConfigError("synth: span_count_probs must not be empty");
    double total = 0;
    for (double p : span_count_probs) {
      if (p < 0) throw ConfigError("synth: span_count_probs must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("synth: span_count_probs must sum to 1");
    if (labeled_train < 1 || test < 1 || unlabeled_pool < 1) throw ConfigError("synth: sizes must be >= 1");
  }
  bool operator==(const GeneratorSpec&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorSpec, seed, num_classes, alphabet_size, motifs_per_class,
                                                motif_length, noise, tag_signal, poi_signal, name_length, tag_length,
                                                poi_length, entity_types, words_per_type, word_length, filler_length,
                                                span_count_probs, labeled_train, test, unlabeled_pool)

struct SynthCorpus {
  std::vector<Example> train;  // gold labels
  std::vector<Example> test;   // gold labels
  std::vector<Example> pool;   // labels stripped
};

enum class Split : std::uint64_t { train = 0, test = 1, pool = 2 };

// Example ids carry the split in the top byte, so the three sets are
// disjoint by construction.
inline std::uint64_t synth_example_id(Split split, std::size_t index) {
  return (static_cast<std::uint64_t>(split) << 56) | static_cast<std::uint64_t>(index);
}

inline const char* split_tag(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    default: return "pool";
  }
}

inline std::string synth_alphabet(std::size_t n) {
  static const std::string all = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
  return all.substr(0, n);
}

// Class motifs and field motifs, a pure function of the generator settings.
struct ClassSignatures {
  std::vector<std::vector<std::string>> name_motifs;  // [class][motif]
  std::vector<double> motif_weights;                  // normalised Zipf weights
  std::vector<std::string> tag_motifs, poi_motifs;    // [class]

  // Class whose name motif occurs in `name`, or -1 if none (or several).
  int lookup(const std::string& name) const {
    int found = -1;
    for (std::size_t c = 0; c < name_motifs.size(); ++c)
      for (const auto& m : name_motifs[c])
        if (name.find(m) != std::string::npos) {
          if (found >= 0 && found != static_cast<int>(c)) return -1;
          found = static_cast<int>(c);
        }
    return found;
  }
};

namespace detail {

inline std::string random_string(Rng& rng, const std::string& alphabet, std::size_t len) {
  std::string s(len, ' ');
  for (auto& ch : s) ch = alphabet[rng.uniform_int(alphabet.size())];
  return s;
}

inline std::size_t draw_length(Rng& rng, const LengthRange& r) {
  return static_cast<std::size_t>(rng.uniform_range(static_cast<std::int64_t>(r.min), static_cast<std::int64_t>(r.max)));
}

inline std::size_t draw_categorical(Rng& rng, const std::vector<double>& probs) {
  const double u = rng.uniform();
  double acc = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

inline std::vector<std::string> distinct_strings(Rng& rng, const std::string& alphabet, std::size_t count,
                                                 std::size_t len, std::vector<std::string>& taken) {
  std::vector<std::string> out;
  while (out.size() < count) {
    auto s = random_string(rng, alphabet, len);
    if (std::find(taken.begin(), taken.end(), s) != taken.end()) continue;
    taken.push_back(s);
    out.push_back(s);
  }
  return out;
}

}  // namespace detail

inline ClassSignatures make_class_signatures(const GeneratorSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synth.signatures"));
  const auto alphabet = synth_alphabet(spec.alphabet_size);
  ClassSignatures sig;
  std::vector<std::string> taken;
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    sig.name_motifs.push_back(detail::distinct_strings(rng, alphabet, spec.motifs_per_class, spec.motif_length, taken));
  double z = 0;
  for (std::size_t i = 0; i < spec.motifs_per_class; ++i) z += 1.0 / static_cast<double>(i + 1);
  for (std::size_t i = 0; i < spec.motifs_per_class; ++i)
    sig.motif_weights.push_back(1.0 / static_cast<double>(i + 1) / z);
  std::vector<std::string> short_taken;
  sig.tag_motifs = detail::distinct_strings(rng, alphabet, spec.num_classes, 2, short_taken);
  sig.poi_motifs = detail::distinct_strings(rng, alphabet, spec.num_classes, 2, short_taken);
  return sig;
}

// One classification example. The name always holds exactly one motif of its
// true class and no motif of any other class; the label equals the true class
// except with probability `noise`, when it is redrawn uniformly.
inline Example make_classification_example(const GeneratorSpec& spec, const ClassSignatures& sig, Split split,
                                           std::size_t index) {
  Rng rng(derive_seed(spec.seed, split_tag(split), index));
  const auto alphabet = synth_alphabet(spec.alphabet_size);
  const auto true_class = rng.uniform_int(spec.num_classes);
  const auto& motif = sig.name_motifs[true_class][detail::draw_categorical(rng, sig.motif_weights)];

  std::string name;
  const std::size_t len = std::max(detail::draw_length(rng, spec.name_length), motif.size());
  for (;;) {
    const auto at = rng.uniform_int(len - motif.size() + 1);
    name = detail::random_string(rng, alphabet, len);
    name.replace(at, motif.size(), motif);
    if (sig.lookup(name) == static_cast<int>(true_class)) break;
  }
  auto field = [&](const LengthRange& r, double signal, const std::string& m) {
    auto s = detail::random_string(rng, alphabet, detail::draw_length(rng, r));
    if (rng.bernoulli(signal)) {
      if (s.size() < m.size()) s = m;
      else s.replace(rng.uniform_int(s.size() - m.size() + 1), m.size(), m);
    }
    return s;
  };
  auto tag = field(spec.tag_length, spec.tag_signal, sig.tag_motifs[true_class]);
  auto poi = field(spec.poi_length, spec.poi_signal, sig.poi_motifs[true_class]);

  Example ex;
  ex.id = synth_example_id(split, index);
  ex.fields = {name, tag, poi};
  int label = static_cast<int>(true_class);
  if (rng.bernoulli(spec.noise)) label = static_cast<int>(rng.uniform_int(spec.num_classes));
  if (split != Split::pool) {
    ex.label = label;
    ex.provenance = Provenance::gold;
  }
  return ex;
}

inline SynthCorpus generate_classification_corpus(const GeneratorSpec& spec) {
  const auto sig = make_class_signatures(spec);
  SynthCorpus out;
  for (std::size_t i = 0; i < spec.labeled_train; ++i)
    out.train.push_back(make_classification_example(spec, sig, Split::train, i));
  for (std::size_t i = 0; i < spec.test; ++i) out.test.push_back(make_classification_example(spec, sig, Split::test, i));
  for (std::size_t i = 0; i < spec.unlabeled_pool; ++i)
    out.pool.push_back(make_classification_example(spec, sig, Split::pool, i));
  return out;
}

// Per-type property lexicons for NER.
inline std::vector<std::vector<std::string>> make_ner_lexicon(const GeneratorSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synth.lexicon"));
  const auto alphabet = synth_alphabet(spec.alphabet_size);
  std::vector<std::vector<std::string>> lex(spec.entity_types.size());
  std::vector<std::string> taken;
  for (auto& words : lex)
    while (words.size() < spec.words_per_type) {
      auto w = detail::random_string(rng, alphabet, detail::draw_length(rng, spec.word_length));
      if (std::find(taken.begin(), taken.end(), w) != taken.end()) continue;
      taken.push_back(w);
      words.push_back(w);
    }
  return lex;
}

// filler (span filler)* with 0..3 spans drawn from span_count_probs. Tags mark
// exactly the inserted property words.
inline Example make_ner_example(const GeneratorSpec& spec, const std::vector<std::vector<std::string>>& lexicon,
                                Split split, std::size_t index) {
  Rng rng(derive_seed(spec.seed, std::string("ner.") + split_tag(split), index));
  const auto alphabet = synth_alphabet(spec.alphabet_size);
  const auto spans = detail::draw_categorical(rng, spec.span_count_probs);
  std::string text;
  std::vector<std::string> tags;
  auto filler = [&] {
    const auto n = detail::draw_length(rng, spec.filler_length);
    text += detail::random_string(rng, alphabet, n);
    tags.insert(tags.end(), n, "O");
  };
  filler();
  for (std::size_t s = 0; s < spans; ++s) {
    const auto type = rng.uniform_int(lexicon.size());
    const auto& word = lexicon[type][rng.uniform_int(lexicon[type].size())];
    text += word;
    tags.push_back("B-" + spec.entity_types[type]);
    tags.insert(tags.end(), word.size() - 1, "I-" + spec.entity_types[type]);
    filler();
  }
  Example ex;
  ex.id = synth_example_id(split, index);
  ex.fields = {text};
  if (split != Split::pool) {
    ex.tags = std::move(tags);
    ex.provenance = Provenance::gold;
  }
  return ex;
}

inline SynthCorpus generate_ner_corpus(const GeneratorSpec& spec) {
  const auto lex = make_ner_lexicon(spec);
  SynthCorpus out;
  for (std::size_t i = 0; i < spec.labeled_train; ++i) out.train.push_back(make_ner_example(spec, lex, Split::train, i));
  for (std::size_t i = 0; i < spec.test; ++i) out.test.push_back(make_ner_example(spec, lex, Split::test, i));
  for (std::size_t i = 0; i < spec.unlabeled_pool; ++i) out.pool.push_back(make_ner_example(spec, lex, Split::pool, i));
  return out;
}

inline SynthCorpus generate_corpus(TaskKind task, const GeneratorSpec& spec) {
  return task == TaskKind::classification ? generate_classification_corpus(spec) : generate_ner_corpus(spec);
}

inline TagSet synth_tagset(const GeneratorSpec& spec) { return TagSet(spec.entity_types); }

inline Example strip_labels(Example ex) {
  ex.label = kNoLabel;
  ex.tags.clear();
  ex.provenance = Provenance::unlabeled;
  return ex;
}

// Seeded split of a labeled corpus. Both halves keep corpus order.
inline std::pair<std::vector<Example>, std::vector<Example>> split_labeled_unlabeled(const std::vector<Example>& corpus,
                                                                                      std::size_t labeled_size,
                                                                                      std::uint64_t seed) {
  if (labeled_size > corpus.size())
    throw ContractError("split_labeled_unlabeled: labeled_size " + std::to_string(labeled_size) +
                        " exceeds corpus size " + std::to_string(corpus.size()));
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split_labeled_unlabeled"));
  rng.shuffle(order);
  std::vector<char> chosen(corpus.size(), 0);
  for (std::size_t i = 0; i < labeled_size; ++i) chosen[order[i]] = 1;
  std::pair<std::vector<Example>, std::vector<Example>> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (chosen[i]) out.first.push_back(corpus[i]);
    else out.second.push_back(strip_labels(corpus[i]));
  }
  return out;
}

}  // namespace selftrain
