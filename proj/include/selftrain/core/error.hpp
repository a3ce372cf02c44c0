// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace selftrain {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Id or position outside a valid range (vocabulary ids, tag ids, labels).
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// A caller broke an operation's precondition (non-scalar backward, pseudo
// labels handed to the final fine-tune, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Invalid or inconsistent configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input files.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Wraps a failure inside a pipeline stage with the stage tag.
struct StageError : std::runtime_error {
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace selftrain
