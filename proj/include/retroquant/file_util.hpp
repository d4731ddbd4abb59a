// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace retroquant {

/// Writes `bytes` to `path` via a sibling temp file and rename, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_text_file(const std::filesystem::path& path);

/// Little-endian IEEE-754 float32 encoding, independent of host byte order.
std::string encode_floats_le(std::span<const float> values);
std::vector<float> decode_floats_le(std::string_view bytes);

/// Formats a float with 9 significant digits (round-trips float32 exactly)
/// and returns it as a double, so JSON output prints those digits.
double json_float(float value);
/// Same rounding to 9 significant digits for double-valued metrics.
double json_double(double value);
/// printf "%.9g".
std::string format_g9(double value);

}  // namespace retroquant
