// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "retroquant/model.hpp"

namespace retroquant {

inline constexpr const char* kModelFormat = "retroquant-model";
inline constexpr int kModelVersion = 1;

/// Writes `model.json` (manifest) and `weights.bin` (every parameter tensor
/// in manifest order, little-endian float32, row-major) into `directory`.
void save_model(const Model& model, const std::filesystem::path& directory);

/// Reads a directory written by save_model. Throws FormatError on a bad
/// magic/version, unknown layer kind or manifest/blob length mismatch, and
/// ShapeMismatch when declared shapes are inconsistent.
Model load_model(const std::filesystem::path& directory);

}  // namespace retroquant
