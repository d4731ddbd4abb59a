// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "retroquant/dataset.hpp"
#include "retroquant/model.hpp"
#include "retroquant/nonuniform.hpp"

namespace retroquant {

/// Bit width that disables quantization of weights or activations.
inline constexpr int kPassthroughBits = 32;

enum class Granularity { PerTensor, PerChannel };

/// Asymmetric affine quantizer on the unsigned grid [0, 2^bits - 1]:
///   real = (code - zero_point) * scale
struct AffineQuantParams {
  std::vector<float> scale;
  std::vector<std::int32_t> zero_point;
  int bits = 8;
  Granularity granularity = Granularity::PerTensor;
  std::size_t axis = 0;

  std::int32_t qmax() const noexcept { return (std::int32_t{1} << bits) - 1; }
  std::size_t channels() const noexcept { return scale.size(); }

  friend bool operator==(const AffineQuantParams&, const AffineQuantParams&) = default;
};

/// Throws InvalidArgument unless 2 <= bits <= 16.
void check_bits(int bits);

/// Code for x: clamp(round(x / scale) + zero_point, 0, qmax), rounding half
/// away from zero.
std::int32_t quantize_value(float x, float scale, std::int32_t zero_point, std::int32_t qmax);
float dequantize_value(std::int32_t code, float scale, std::int32_t zero_point);
float fake_quant_value(float x, float scale, std::int32_t zero_point, std::int32_t qmax);

/// Per-tensor params for [min, max] extended to include 0, so real 0 is exact.
/// A degenerate [0, 0] range yields scale 1, zero point 0.
AffineQuantParams affine_params(float min, float max, int bits);

/// Per-channel params along `channel_axis`, one affine_params per channel.
AffineQuantParams per_channel_params(const Tensor& weights, int bits,
                                     std::size_t channel_axis = 0);

/// Per-tensor params from the tensor's own min and max.
AffineQuantParams per_tensor_params(const Tensor& weights, int bits);

/// Quantize-dequantize every element. Throws ChannelMismatch when per-channel
/// params don't match the tensor's channel dimension.
Tensor fake_quant(const Tensor& x, const AffineQuantParams& params);

double mean_squared_error(const Tensor& a, const Tensor& b);

enum class WeightScheme { PerTensor, PerChannel, NonUniform };

std::string_view weight_scheme_name(WeightScheme s) noexcept;
std::optional<WeightScheme> parse_weight_scheme(std::string_view name) noexcept;

/// How one layer's weights were quantized, and the resulting weights.
struct LayerWeightQuant {
  std::size_t layer_index = 0;
  WeightScheme scheme = WeightScheme::PerTensor;
  std::optional<AffineQuantParams> affine;       // PerTensor / PerChannel
  std::optional<NonUniformCodebook> codebook;    // NonUniform
  Tensor fake_weight;
};

/// Quantizes the weight tensor of a Conv2D/Linear layer. Throws NotQuantizable.
LayerWeightQuant quantize_layer_weights(const Model& model, std::size_t layer_index,
                                        WeightScheme scheme, int bits);

/// Observed range at one activation-function output.
struct ActivationRange {
  std::size_t layer_index = 0;
  float min = 0.0f;
  float max = 0.0f;

  friend bool operator==(const ActivationRange&, const ActivationRange&) = default;
};

/// Per-point observed ranges plus the per-tensor quantizer derived from each.
struct ActivationCalibration {
  std::vector<ActivationRange> ranges;
  std::vector<AffineQuantParams> params;
  int bits = 8;

  friend bool operator==(const ActivationCalibration&, const ActivationCalibration&) = default;
};

/// Running min/max at every activation output over all samples.
std::vector<ActivationRange> observe_activation_ranges(const Model& model,
                                                       const LabeledDataset& data);

/// Elementwise min/max merge of two range lists over the same points.
std::vector<ActivationRange> merge_ranges(std::span<const ActivationRange> a,
                                          std::span<const ActivationRange> b);

/// Throws EmptyDataset for empty calibration data.
ActivationCalibration calibrate_activations(const Model& model, const LabeledDataset& data,
                                            int activation_bits);

/// Attaches quantizers to already-observed ranges.
ActivationCalibration calibration_from_ranges(std::vector<ActivationRange> ranges,
                                              int activation_bits);

/// A model whose weights are fake-quantized and whose activation outputs are
/// fake-quantized at inference time. `base` is kept untouched.
struct QuantModel {
  Model base;
  Model weights_model;
  std::vector<LayerWeightQuant> weights;
  ActivationCalibration activations;
  int weight_bits = 8;
  int activation_bits = 8;
  /// Seed of the calibration data, echoed into `quant.json`.
  std::uint64_t seed = 42;

  bool weights_enabled() const noexcept { return weight_bits != kPassthroughBits; }
  bool activations_enabled() const noexcept { return activation_bits != kPassthroughBits; }
};

/// `schemes` holds one entry per quantizable layer in layer order. Bits of 32
/// disable the corresponding quantization. Throws IncompleteAssignment or
/// IncompleteRanges when coverage is missing.
QuantModel build_quant_model(const Model& model, std::span<const WeightScheme> schemes,
                             const ActivationCalibration& calibration, int weight_bits,
                             int activation_bits);

Tensor forward(const QuantModel& model, const Tensor& batch);

inline constexpr const char* kQuantFormat = "retroquant-quant";
inline constexpr int kQuantVersion = 1;

/// Writes the base model plus `quant.json` into `directory`.
void save_quant_model(const QuantModel& model, const std::filesystem::path& directory);
QuantModel load_quant_model(const std::filesystem::path& directory);
bool is_quant_model_directory(const std::filesystem::path& directory);

}  // namespace retroquant
