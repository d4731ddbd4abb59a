// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <span>
#include <string>

namespace retroquant::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPipelineError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. `args` excludes the program name. Failures print a
/// single `error: kind=<Kind> message=<text>` line to `err`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace retroquant::cli
