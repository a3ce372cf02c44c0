// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <openssl/evp.h>

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "selftrain/core/error.hpp"
#include "selftrain/data/synth.hpp"
#include "selftrain/model/encoder.hpp"
#include "selftrain/objectives/variant.hpp"
#include "selftrain/text/corpus.hpp"
#include "selftrain/text/masking.hpp"

namespace selftrain {

inline void to_json(nlohmann::json& j, TaskKind k) { j = to_string(k); }
inline void from_json(const nlohmann::json& j, TaskKind& k) { k = parse_task_kind(j.get<std::string>()); }
inline void to_json(nlohmann::json& j, LossVariant v) { j = to_string(v); }
inline void from_json(const nlohmann::json& j, LossVariant& v) { v = parse_loss_variant(j.get<std::string>()); }
inline void to_json(nlohmann::json& j, InputVariant v) { j = to_string(v); }
inline void from_json(const nlohmann::json& j, InputVariant& v) { v = parse_input_variant(j.get<std::string>()); }

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MaskOptions, rate, mask_token_prob, random_token_prob)

// Training length is `steps` when non-zero, else `epochs` passes over the
// stage's training set but at least `min_steps`.
struct ScheduleConfig {
  std::size_t steps = 0;
  std::size_t epochs = 0;
  std::size_t min_steps = 0;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;

  std::size_t total_steps(std::size_t n_examples) const {
    if (steps) return steps;
    if (epochs == 0) return 0;
    return std::max(min_steps, epochs * ((n_examples + batch_size - 1) / batch_size));
  }
  bool operator==(const ScheduleConfig&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleConfig, steps, epochs, min_steps, batch_size, lr, warmup_fraction,
                                                weight_decay)

struct Schedules {
  // Desk-scale runs are short enough that coupled L2 at 0.01 drags weights
  // with weak gradients to zero, so decay defaults to 0 here.
  ScheduleConfig pretrain{.steps = 1500, .epochs = 0, .min_steps = 0, .batch_size = 64, .lr = 3e-3,
                          .warmup_fraction = 0.1, .weight_decay = 0.0};
  ScheduleConfig finetune{.steps = 0, .epochs = 5, .min_steps = 600, .batch_size = 32, .lr = 1e-3,
                          .warmup_fraction = 0.1, .weight_decay = 0.0};
  ScheduleConfig tsp{.steps = 1500, .epochs = 0, .min_steps = 0, .batch_size = 64, .lr = 3e-3,
                     .warmup_fraction = 0.1, .weight_decay = 0.0};
  bool operator==(const Schedules&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Schedules, pretrain, finetune, tsp)

struct SelfTrainingConfig {
  double tau = 0.9;
  std::size_t sample_size = 0;    // |S| target; 0 = every qualifying record
  std::size_t per_class_cap = 0;  // 0 = ceil(sample_size / num_classes)
  std::size_t iterations = 1;
  std::string confidence = "mean";  // NER: mean | min over tokens
  bool operator==(const SelfTrainingConfig&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SelfTrainingConfig, tau, sample_size, per_class_cap, iterations,
                                                confidence)

// Either a generator spec or three corpus files (train/test/pool).
struct DataConfig {
  GeneratorSpec generator;
  std::int64_t data_seed = -1;  // generator seed; -1 = the pipeline seed
  std::string train_path, test_path, pool_path;
  std::size_t vocab_min_count = 1;

  bool from_files() const { return !train_path.empty(); }
  bool operator==(const DataConfig&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, generator, data_seed, train_path, test_path, pool_path,
                                                vocab_min_count)

struct AblationConfig {
  bool baselines = false;  // plain fine-tune and classic self-training rows
  bool evaluate_c = true;
  bool operator==(const AblationConfig&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AblationConfig, baselines, evaluate_c)

struct GridConfig {
  std::vector<LossVariant> loss{LossVariant::LogitsKL_plus_MLM, LossVariant::LogitsKL_only};
  std::vector<InputVariant> input{InputVariant::Masked, InputVariant::NoMask};
  std::vector<std::size_t> labeled{};   // empty = the pipeline's labeled_size
  std::vector<std::string> lineage{"D"};
  std::vector<std::uint64_t> seeds{};   // empty = the pipeline's seed
  bool operator==(const GridConfig&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GridConfig, loss, input, labeled, lineage, seeds)

inline EncoderConfig default_encoder_config() {
  EncoderConfig e;
  e.num_layers = 2;
  e.hidden = 32;
  e.heads = 2;
  e.ffn_mult = 4;
  e.max_seq_len = 32;
  e.init_std = 0.1;
  return e;
}

struct PipelineConfig {
  TaskKind task = TaskKind::classification;
  std::uint64_t seed = 0;
  EncoderConfig encoder = default_encoder_config();  // vocab/class/tag sizes: 0 = from data
  DataConfig data;
  std::size_t labeled_size = 500;  // 0 = the whole labeled training set
  LossVariant loss_variant = LossVariant::LogitsKL_only;
  InputVariant input_variant = InputVariant::NoMask;
  MaskOptions mask;
  SelfTrainingConfig self_training;
  double kl_temperature = 1.0;
  Schedules schedules;
  std::size_t eval_batch_size = 256;
  AblationConfig ablation;
  GridConfig grid;
  bool deterministic = true;

  void validate() const {
    validate_pairing(loss_variant, input_variant);
    if (!(self_training.tau > 0.0 && self_training.tau <= 1.0))
      throw ConfigError("self_training.tau must lie in (0, 1], got " + std::to_string(self_training.tau));
    if (self_training.confidence != "mean" && self_training.confidence != "min")
      throw ConfigError("self_training.confidence must be 'mean' or 'min'");
    if (self_training.iterations < 1) throw ConfigError("self_training.iterations must be >= 1");
    auto enc = encoder;
    enc.vocab_size = std::max<std::size_t>(enc.vocab_size, 5);
    enc.validate();
    if (task == TaskKind::classification && encoder.max_seq_len < 8)
      throw ConfigError("encoder.max_seq_len must be >= 8 for classification input");
    if (!(kl_temperature > 0.0)) throw ConfigError("kl_temperature must be positive");
    if (!(mask.rate >= 0.0 && mask.rate < 1.0)) throw ConfigError("mask.rate must lie in [0, 1)");
    if (mask.mask_token_prob < 0 || mask.random_token_prob < 0 || mask.mask_token_prob + mask.random_token_prob > 1.0)
      throw ConfigError("mask: mask_token_prob + random_token_prob must lie in [0, 1]");
    for (const auto* s : {&schedules.pretrain, &schedules.finetune, &schedules.tsp}) {
      if (s->batch_size < 1) throw ConfigError("schedule batch_size must be >= 1");
      if (!(s->lr > 0.0)) throw ConfigError("schedule lr must be positive");
      if (!(s->warmup_fraction >= 0.0 && s->warmup_fraction <= 1.0))
        throw ConfigError("schedule warmup_fraction must lie in [0, 1]");
    }
    if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be >= 1");
    if (data.from_files()) {
      if (data.test_path.empty() || data.pool_path.empty())
        throw ConfigError("data: train_path, test_path and pool_path must be given together");
    } else {
      data.generator.validate();
      if (labeled_size > data.generator.labeled_train)
        throw ConfigError("labeled_size " + std::to_string(labeled_size) + " exceeds data.generator.labeled_train " +
                          std::to_string(data.generator.labeled_train));
      for (auto l : grid.labeled)
        if (l > data.generator.labeled_train)
          throw ConfigError("grid.labeled size " + std::to_string(l) + " exceeds data.generator.labeled_train");
    }
    for (const auto& l : grid.lineage)
      if (l != "D" && l != "C" && l != "B" && l != "baseline" && l != "classic-base" && l != "classic-A" &&
          l != "classic-C")
        throw ConfigError("grid.lineage: unknown stage '" + l +
                          "' (expected D, C, B, baseline, classic-base, classic-A or classic-C)");
  }
  bool operator==(const PipelineConfig&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PipelineConfig, task, seed, encoder, data, labeled_size, loss_variant,
                                                input_variant, mask, self_training, kl_temperature, schedules,
                                                eval_batch_size, ablation, grid, deterministic)

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw ContractError("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

// Keys are sorted by nlohmann::json's object map, so dump() is canonical.
inline std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

inline std::string config_hash(const nlohmann::json& j) { return sha256_hex(canonical_json(j)); }

namespace detail {

inline void check_known_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& where) {
  if (!given.is_object() || !reference.is_object()) return;
  for (const auto& [k, v] : given.items()) {
    const auto path = where.empty() ? k : where + "." + k;
    if (!reference.contains(k)) throw ConfigError("unknown config key '" + path + "'");
    check_known_keys(v, reference[k], path);
  }
}

inline std::size_t line_of_byte(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) line += text[i] == '\n';
  return line;
}

}  // namespace detail

// Applies defaults to a (possibly partial) JSON object and validates.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  // Merging onto the full default keeps nested defaults that differ from a
  // member type's own defaults (e.g. the encoder and schedules).
  nlohmann::json merged = PipelineConfig{};
  detail::check_known_keys(j, merged, "");
  merged.merge_patch(j);
  PipelineConfig c;
  try {
    c = merged.get<PipelineConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline PipelineConfig parse_config(std::string_view text, const std::string& origin = "<config>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ":" + std::to_string(detail::line_of_byte(text, e.byte ? e.byte - 1 : 0)) +
                      ": JSON parse error: " + e.what());
  }
  return config_from_json(j);
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace selftrain
