// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace retroquant {

enum class ErrorKind {
  ShapeMismatch,
  InvalidLayerParam,
  UnsupportedLayer,
  EmptyBatch,
  InvalidAxis,
  InvalidArgument,
  FormatError,
  IoError,
  LengthMismatch,
  TraceMismatch,
  DivergedLoss,
  NonFinite,
  ChannelMismatch,
  EmptyDataset,
  IncompleteAssignment,
  IncompleteRanges,
  NotQuantizable,
  EmptyInput,
  BudgetTooSmall,
  Diverged,
  UsageError,
};

std::string_view error_kind_name(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a kind so that callers
/// (notably the CLI) can surface a stable, machine-readable name.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view kind_name() const noexcept { return error_kind_name(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace retroquant
