// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "retroquant/layers.hpp"

namespace rq_test {

/// Double-precision copy of a layer, written directly from the layer
/// definitions and independent of the engine's kernels.
struct RefLayer {
  retroquant::LayerKind kind;
  std::vector<double> weight, bias, gamma, beta, running_mean, running_var;
  retroquant::Shape weight_shape;
  std::size_t stride = 1, padding = 0, window = 2;
  double eps = 0.0;

  explicit RefLayer(const retroquant::LayerSpec& layer);
  /// Trainable parameters in LayerSpec::trainable_names() order.
  std::vector<std::vector<double>*> trainable();
};

struct RefTensor {
  retroquant::Shape shape;
  std::vector<double> data;
};

RefTensor to_ref(const retroquant::Tensor& t);

RefTensor reference_forward(const RefLayer& layer, const RefTensor& x, retroquant::BnMode mode);

}  // namespace rq_test
