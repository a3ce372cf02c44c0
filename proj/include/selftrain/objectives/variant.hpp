// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "selftrain/core/error.hpp"

namespace selftrain {

// Loss used when pre-training on pseudo labels.
enum class LossVariant { LabelCE_plus_MLM, LabelCE_only, LogitsKL_plus_MLM, LogitsKL_only };

// Whether that pre-training sees masked or original text.
enum class InputVariant { Masked, NoMask };

inline bool includes_mlm(LossVariant v) {
  return v == LossVariant::LabelCE_plus_MLM || v == LossVariant::LogitsKL_plus_MLM;
}

inline bool uses_logits(LossVariant v) {
  return v == LossVariant::LogitsKL_plus_MLM || v == LossVariant::LogitsKL_only;
}

inline const char* to_string(LossVariant v) {
  switch (v) {
    case LossVariant::LabelCE_plus_MLM: return "LabelCE_plus_MLM";
    case LossVariant::LabelCE_only: return "LabelCE_only";
    case LossVariant::LogitsKL_plus_MLM: return "LogitsKL_plus_MLM";
    default: return "LogitsKL_only";
  }
}

inline const char* to_string(InputVariant v) { return v == InputVariant::Masked ? "Masked" : "NoMask"; }

inline LossVariant parse_loss_variant(const std::string& s) {
  for (auto v : {LossVariant::LabelCE_plus_MLM, LossVariant::LabelCE_only, LossVariant::LogitsKL_plus_MLM,
                 LossVariant::LogitsKL_only})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown loss variant '" + s + "'");
}

inline InputVariant parse_input_variant(const std::string& s) {
  if (s == "Masked") return InputVariant::Masked;
  if (s == "NoMask") return InputVariant::NoMask;
  throw ConfigError("unknown input variant '" + s + "' (expected Masked or NoMask)");
}

// The MLM term needs masked positions, so NoMask input only pairs with the
// task-loss-only variants.
inline bool is_legal_pairing(LossVariant loss, InputVariant input) {
  return !(input == InputVariant::NoMask && includes_mlm(loss));
}

inline void validate_pairing(LossVariant loss, InputVariant input) {
  if (!is_legal_pairing(loss, input))
    throw ConfigError(std::string("input_variant NoMask cannot be combined with loss_variant ") + to_string(loss) +
                      ": the MLM term needs masked input (NoMask requires LabelCE_only or LogitsKL_only)");
}

}  // namespace selftrain
