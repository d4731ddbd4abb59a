// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "retroquant/layers.hpp"
#include "retroquant/tensor.hpp"

namespace retroquant {

/// Sequential FP32 model. Values are treated as immutable once built; the
/// trainer and quantizers produce new Model values instead of editing in place.
struct Model {
  std::string name;
  Shape input_shape;  // per-sample, without the batch dimension
  std::size_t class_count = 0;
  std::vector<LayerSpec> layers;

  /// Validates every layer and that shapes chain from input_shape to
  /// [class_count]. Throws InvalidLayerParam or ShapeMismatch.
  void validate() const;

  /// True when the final layer is a Softmax (outputs are probabilities).
  bool outputs_probabilities() const noexcept;

  std::vector<std::size_t> quantizable_layers() const;
  std::vector<std::size_t> batch_norm_layers() const;
  std::vector<std::size_t> activation_layers() const;
  std::size_t parameter_count() const;

  friend bool operator==(const Model&, const Model&) = default;
};

/// Throws ShapeMismatch unless batch is [n] + model.input_shape with n >= 1.
void check_batch(const Model& model, const Tensor& batch);

enum class TracePointKind { BatchNormInput, ActivationOutput };

/// Statistics recorded at one point of a forward pass.
struct TracePoint {
  std::size_t layer_index = 0;
  TracePointKind kind = TracePointKind::ActivationOutput;
  ChannelStats stats;
  float min = 0.0f;
  float max = 0.0f;
};

/// Recording points in layer order: the input of each BatchNorm layer and
/// the output of each activation-function layer.
using ActivationTrace = std::vector<TracePoint>;

/// Called on the output of every activation-function layer; may modify it.
using ActivationHook = std::function<void(std::size_t layer_index, Tensor& output)>;

struct ForwardOptions {
  BnMode bn_mode = BnMode::Inference;
  const ActivationHook* hook = nullptr;
};

/// Runs the model and keeps every intermediate: result[0] is the input,
/// result[i + 1] the output of layer i.
std::vector<Tensor> forward_activations(const Model& model, const Tensor& batch,
                                        const ForwardOptions& options = {});

/// Runs layers [start_layer, end) on `activation`, which must be the input to
/// start_layer. Only the final output is kept.
Tensor forward_from(const Model& model, std::size_t start_layer, Tensor activation,
                    const ForwardOptions& options = {});

Tensor forward(const Model& model, const Tensor& batch, const ForwardOptions& options = {});

/// Builds the trace for a completed forward pass.
ActivationTrace trace_from_activations(const Model& model,
                                       std::span<const Tensor> activations);

struct TracedOutput {
  Tensor logits;
  ActivationTrace trace;  // empty when capture is off
};

TracedOutput forward_traced(const Model& model, const Tensor& batch, bool capture);

/// Gradient contribution of a loss at activations[index].
struct ActivationGrad {
  std::size_t index = 0;
  Tensor grad;
};

struct LossEvaluation {
  double value = 0.0;
  std::vector<ActivationGrad> grads;
};

/// A differentiable scalar loss over the intermediates of a forward pass.
using LossSpec = std::function<LossEvaluation(std::span<const Tensor> activations)>;

/// Backpropagates gradient injections down to the model input. Parameters
/// are read only.
Tensor backward_to_input(const Model& model, std::span<const Tensor> activations,
                         std::span<const ActivationGrad> grads,
                         BnMode mode = BnMode::Inference);

struct InputGradient {
  double loss = 0.0;
  Tensor grad;
};

/// dLoss/dInput for a frozen model.
InputGradient input_gradient(const Model& model, const Tensor& input,
                             const LossSpec& loss);

/// Mean cross-entropy of model outputs against labels, with its gradient
/// with respect to those outputs. Handles logits and probability outputs.
LossEvaluation cross_entropy(const Model& model, const Tensor& outputs,
                             std::span<const std::size_t> labels);

struct ParamGradients {
  double loss = 0.0;
  /// layers[i][j] is the gradient of trainable parameter j of layer i.
  std::vector<std::vector<Tensor>> layers;
};

ParamGradients param_gradients(const Model& model, const Tensor& batch,
                               std::span<const std::size_t> labels,
                               BnMode mode = BnMode::Inference);

/// Same, reusing a forward pass already run with `mode`.
ParamGradients param_gradients_from(const Model& model, std::span<const Tensor> activations,
                                    std::span<const std::size_t> labels,
                                    BnMode mode = BnMode::Inference);

}  // namespace retroquant
