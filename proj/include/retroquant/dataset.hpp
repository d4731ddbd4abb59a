// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "retroquant/tensor.hpp"

namespace retroquant {

enum class Provenance { Synthetic, Retro, RandomGaussian };

std::string_view provenance_name(Provenance p) noexcept;
std::optional<Provenance> parse_provenance(std::string_view name) noexcept;

/// Samples [n] + sample_shape with one integer label per sample.
struct LabeledDataset {
  Tensor samples;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;
  Provenance provenance = Provenance::Synthetic;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
  /// Throws EmptyDataset, ShapeMismatch or InvalidArgument on broken invariants.
  void validate() const;
  /// Samples [begin, end) with their labels.
  LabeledDataset slice(std::size_t begin, std::size_t end) const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

/// Concatenates datasets that share sample shape and class count.
LabeledDataset concat_datasets(std::span<const LabeledDataset> parts);

inline constexpr const char* kDatasetFormat = "retroquant-dataset";
inline constexpr int kDatasetVersion = 1;

/// Writes `dataset.json` (counts, shape, seed, labels) and `data.bin`
/// (little-endian float32 samples, row-major).
void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& directory);
LabeledDataset load_dataset(const std::filesystem::path& directory);

}  // namespace retroquant
