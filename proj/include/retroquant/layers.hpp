// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "retroquant/tensor.hpp"

namespace retroquant {

enum class LayerKind {
  Conv2D,
  Linear,
  BatchNorm,
  ReLU,
  MaxPool,
  AvgPool,
  Flatten,
  Softmax,
};

std::string_view layer_kind_name(LayerKind kind) noexcept;
/// Parses the manifest spelling ("conv2d", "linear", ...). Unknown names yield nullopt.
std::optional<LayerKind> parse_layer_kind(std::string_view name) noexcept;

/// Batch-norm evaluation mode. Quantization flows only ever use Inference.
enum class BnMode { Inference, Training };

/// One layer of a sequential model: kind, parameter tensors and hyperparameters.
///
/// Parameter layout:
///   Conv2D    weight [out, in, kh, kw], bias [out]
///   Linear    weight [out, in], bias [out]
///   BatchNorm gamma, beta, running_mean, running_var, each [channels]
/// Pools use `window` and `stride`; Conv2D uses `stride` and `padding`.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;

  Tensor weight;
  Tensor bias;
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 2;
  float eps = 1e-5f;

  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels,
                          std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0);
  static LayerSpec linear(std::size_t in_features, std::size_t out_features);
  static LayerSpec batch_norm(std::size_t channels, float eps = 1e-5f);
  static LayerSpec relu();
  static LayerSpec max_pool(std::size_t window, std::size_t stride);
  static LayerSpec avg_pool(std::size_t window, std::size_t stride);
  static LayerSpec flatten();
  static LayerSpec softmax();

  /// Conv2D and Linear carry quantizable weights.
  bool quantizable() const noexcept {
    return kind == LayerKind::Conv2D || kind == LayerKind::Linear;
  }
  bool is_activation() const noexcept { return kind == LayerKind::ReLU; }

  /// Serialized parameter names in manifest order.
  std::vector<std::string_view> parameter_names() const;
  /// Parameters updated by training, in the same order as gradients are reported.
  std::vector<std::string_view> trainable_names() const;
  Tensor& parameter(std::string_view name);
  const Tensor& parameter(std::string_view name) const;

  /// Checks hyperparameters and parameter shapes; throws InvalidLayerParam.
  void validate() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Batch output shape for a batch input shape; throws ShapeMismatch.
Shape layer_output_shape(const LayerSpec& layer, const Shape& input_shape);

Tensor layer_forward(const LayerSpec& layer, const Tensor& input,
                     BnMode mode = BnMode::Inference);

struct LayerGradients {
  Tensor input;
  /// One entry per trainable parameter (see LayerSpec::trainable_names); empty
  /// when parameter gradients were not requested.
  std::vector<Tensor> params;
};

/// Backward rule for a single layer given its forward input/output.
/// ReLU passes zero gradient at exactly 0.
LayerGradients layer_backward(const LayerSpec& layer, const Tensor& input,
                              const Tensor& output, const Tensor& grad_output,
                              BnMode mode, bool want_params);

}  // namespace retroquant
