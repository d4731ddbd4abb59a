// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/model.hpp"

#include <algorithm>
#include <cmath>

#include "retroquant/error.hpp"

namespace retroquant {

void Model::validate() const {
  require(!input_shape.empty(), ErrorKind::ShapeMismatch, "model input shape is empty");
  require(class_count >= 1, ErrorKind::ShapeMismatch, "model needs at least one class");
  Shape shape = input_shape;
  shape.insert(shape.begin(), 1);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].validate();
    try {
      shape = layer_output_shape(layers[i], shape);
    } catch (const Error& e) {
      fail(e.kind(), "layer " + std::to_string(i) + ": " + e.what());
    }
  }
  require(shape == Shape{1, class_count}, ErrorKind::ShapeMismatch,
          "model output " + shape_to_string(shape) + " is not [n," +
              std::to_string(class_count) + "]");
}

bool Model::outputs_probabilities() const noexcept {
  return !layers.empty() && layers.back().kind == LayerKind::Softmax;
}

std::vector<std::size_t> Model::quantizable_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].quantizable()) out.push_back(i);
  return out;
}

std::vector<std::size_t> Model::batch_norm_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::BatchNorm) out.push_back(i);
  return out;
}

std::vector<std::size_t> Model::activation_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].is_activation()) out.push_back(i);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (auto name : l.trainable_names()) n += l.parameter(name).size();
  return n;
}

void check_batch(const Model& model, const Tensor& batch) {
  const Shape& s = batch.shape();
  require(s.size() == model.input_shape.size() + 1 && s[0] >= 1 &&
              std::equal(model.input_shape.begin(), model.input_shape.end(),
                         s.begin() + 1),
          ErrorKind::ShapeMismatch,
          "batch shape " + shape_to_string(s) + " does not match [n]+" +
              shape_to_string(model.input_shape));
}

namespace {

Tensor apply_layer(const Model& model, std::size_t i, const Tensor& x,
                   const ForwardOptions& options) {
  Tensor y = layer_forward(model.layers[i], x, options.bn_mode);
  if (options.hook && model.layers[i].is_activation()) (*options.hook)(i, y);
  return y;
}

}  // namespace

std::vector<Tensor> forward_activations(const Model& model, const Tensor& batch,
                                        const ForwardOptions& options) {
  check_batch(model, batch);
  std::vector<Tensor> acts;
  acts.reserve(model.layers.size() + 1);
  acts.push_back(batch);
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    acts.push_back(apply_layer(model, i, acts.back(), options));
  return acts;
}

Tensor forward_from(const Model& model, std::size_t start_layer, Tensor activation,
                    const ForwardOptions& options) {
  require(start_layer <= model.layers.size(), ErrorKind::InvalidArgument,
          "start layer out of range");
  for (std::size_t i = start_layer; i < model.layers.size(); ++i)
    activation = apply_layer(model, i, activation, options);
  return activation;
}

Tensor forward(const Model& model, const Tensor& batch, const ForwardOptions& options) {
  check_batch(model, batch);
  return forward_from(model, 0, batch, options);
}

ActivationTrace trace_from_activations(const Model& model,
                                       std::span<const Tensor> activations) {
  require(activations.size() == model.layers.size() + 1, ErrorKind::TraceMismatch,
          "activation list does not match layer count");
  ActivationTrace trace;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    const Tensor* t = nullptr;
    TracePointKind kind{};
    if (l.kind == LayerKind::BatchNorm) {
      t = &activations[i];
      kind = TracePointKind::BatchNormInput;
    } else if (l.is_activation()) {
      t = &activations[i + 1];
      kind = TracePointKind::ActivationOutput;
    } else {
      continue;
    }
    TracePoint p;
    p.layer_index = i;
    p.kind = kind;
    p.stats = channel_stats(*t, 1);
    p.min = t->min();
    p.max = t->max();
    trace.push_back(std::move(p));
  }
  return trace;
}

TracedOutput forward_traced(const Model& model, const Tensor& batch, bool capture) {
  if (!capture) return {forward(model, batch), {}};
  std::vector<Tensor> acts = forward_activations(model, batch);
  TracedOutput out;
  out.trace = trace_from_activations(model, acts);
  out.logits = std::move(acts.back());
  return out;
}

namespace {

// Walks the layers backwards, adding each injected gradient at its index.
Tensor backward_impl(const Model& model, std::span<const Tensor> acts,
                     std::span<const ActivationGrad> grads, BnMode mode,
                     std::vector<std::vector<Tensor>>* param_grads) {
  const std::size_t n_layers = model.layers.size();
  require(acts.size() == n_layers + 1, ErrorKind::ShapeMismatch,
          "activation list does not match layer count");
  std::vector<std::vector<const ActivationGrad*>> extra(n_layers + 1);
  for (const auto& g : grads) {
    require(g.index <= n_layers, ErrorKind::InvalidArgument,
            "gradient index out of range");
    require(g.grad.shape() == acts[g.index].shape(), ErrorKind::ShapeMismatch,
            "gradient shape does not match activation " + std::to_string(g.index));
    extra[g.index].push_back(&g);
  }
  auto accumulate = [&](Tensor& g, std::size_t index) {
    for (const ActivationGrad* e : extra[index]) {
      if (g.empty()) {
        g = e->grad;
      } else {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += e->grad[k];
      }
    }
  };
  Tensor g;
  accumulate(g, n_layers);
  if (g.empty()) g = Tensor(acts[n_layers].shape());
  if (param_grads) param_grads->assign(n_layers, {});
  for (std::size_t i = n_layers; i-- > 0;) {
    LayerGradients lg = layer_backward(model.layers[i], acts[i], acts[i + 1], g, mode,
                                       param_grads != nullptr);
    if (param_grads) (*param_grads)[i] = std::move(lg.params);
    g = std::move(lg.input);
    accumulate(g, i);
  }
  return g;
}

}  // namespace

Tensor backward_to_input(const Model& model, std::span<const Tensor> activations,
                         std::span<const ActivationGrad> grads, BnMode mode) {
  return backward_impl(model, activations, grads, mode, nullptr);
}

InputGradient input_gradient(const Model& model, const Tensor& input,
                             const LossSpec& loss) {
  std::vector<Tensor> acts = forward_activations(model, input);
  LossEvaluation eval = loss(acts);
  InputGradient out;
  out.loss = eval.value;
  out.grad = backward_to_input(model, acts, eval.grads);
  return out;
}

LossEvaluation cross_entropy(const Model& model, const Tensor& outputs,
                             std::span<const std::size_t> labels) {
  require(outputs.rank() == 2, ErrorKind::ShapeMismatch, "outputs must be [n,k]");
  const std::size_t n = outputs.shape()[0], k = outputs.shape()[1];
  require(n >= 1, ErrorKind::EmptyBatch, "empty batch");
  require(labels.size() == n, ErrorKind::ShapeMismatch,
          "label count " + std::to_string(labels.size()) + " does not match batch " +
              std::to_string(n));
  for (std::size_t l : labels)
    require(l < k, ErrorKind::InvalidArgument, "label out of range");
  LossEvaluation eval;
  Tensor grad(outputs.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  if (model.outputs_probabilities()) {
    constexpr double floor = 1e-12;
    for (std::size_t r = 0; r < n; ++r) {
      const double p = std::max<double>(outputs[r * k + labels[r]], floor);
      eval.value -= std::log(p) * inv_n;
      grad[r * k + labels[r]] = static_cast<float>(-inv_n / p);
    }
  } else {
    const Tensor probs = softmax_rows(outputs);
    for (std::size_t r = 0; r < n; ++r) {
      const float* z = outputs.data().data() + r * k;
      const double m = *std::max_element(z, z + k);
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) total += std::exp(z[j] - m);
      eval.value += (m + std::log(total) - z[labels[r]]) * inv_n;
      for (std::size_t j = 0; j < k; ++j) {
        const double target = j == labels[r] ? 1.0 : 0.0;
        grad[r * k + j] = static_cast<float>((probs[r * k + j] - target) * inv_n);
      }
    }
  }
  eval.grads.push_back({model.layers.size(), std::move(grad)});
  return eval;
}

ParamGradients param_gradients(const Model& model, const Tensor& batch,
                               std::span<const std::size_t> labels, BnMode mode) {
  require(batch.rank() >= 1 && batch.shape()[0] >= 1, ErrorKind::EmptyBatch,
          "empty batch");
  ForwardOptions opts;
  opts.bn_mode = mode;
  return param_gradients_from(model, forward_activations(model, batch, opts), labels, mode);
}

ParamGradients param_gradients_from(const Model& model, std::span<const Tensor> activations,
                                    std::span<const std::size_t> labels, BnMode mode) {
  require(!activations.empty(), ErrorKind::ShapeMismatch, "no activations");
  LossEvaluation eval = cross_entropy(model, activations.back(), labels);
  ParamGradients out;
  out.loss = eval.value;
  backward_impl(model, activations, eval.grads, mode, &out.layers);
  return out;
}

}  // namespace retroquant
