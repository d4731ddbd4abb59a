// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "retroquant/dataset.hpp"
#include "retroquant/model.hpp"
#include "retroquant/quant.hpp"

namespace retroquant {

inline const Shape kDefaultInputShape = {1, 16, 16};
inline constexpr std::size_t kDefaultClassCount = 10;
inline constexpr std::uint64_t kDefaultTemplateSeed = 7;

struct SynthOptions {
  /// Seeds the class templates. Datasets that share it share their classes,
  /// so train and test splits differ only in `seed`.
  std::uint64_t template_seed = kDefaultTemplateSeed;
  float noise_std = 2.0f;
  /// Maximum random translation, in pixels, along each spatial axis.
  std::size_t max_shift = 1;
};

/// Smooth per-class template images (zero mean, unit std), each sample a
/// randomly shifted template plus Gaussian noise, rescaled to unit variance.
/// Samples are ordered by class.
LabeledDataset synth_dataset(std::uint64_t seed, std::size_t class_count,
                             std::size_t per_class, const Shape& input_shape,
                             const SynthOptions& options = {});

/// The noise-free class templates used by synth_dataset, [class_count] + input_shape.
Tensor synth_templates(std::size_t class_count, const Shape& input_shape,
                       std::uint64_t template_seed = kDefaultTemplateSeed);

/// i.i.d. N(0, 1) samples with uniformly drawn labels.
LabeledDataset random_gaussian_dataset(std::uint64_t seed, std::size_t n,
                                       const Shape& input_shape,
                                       std::size_t class_count = kDefaultClassCount);

enum class Arch { CnnBn, CnnPlain, Mlp, CnnDeep };

std::string_view arch_name(Arch arch) noexcept;
std::optional<Arch> parse_arch(std::string_view name) noexcept;

/// Untrained model with He-normal weights, zero biases and identity BatchNorm.
///   cnn_bn     (Conv-BN-ReLU) x3, AvgPool, Flatten, Linear
///   cnn_plain  cnn_bn without BatchNorm
///   mlp        Flatten, (Linear-ReLU) x2, Linear
///   cnn_deep   (Conv-BN-ReLU) x5, AvgPool, Flatten, Linear
/// The convolutional archs expect a 16x16 input.
Model build_arch(Arch arch, const Shape& input_shape, std::size_t class_count,
                 std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 8;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  /// Momentum of the BatchNorm running-statistic update.
  double bn_momentum = 0.1;
};

struct TrainResult {
  Model model;
  std::vector<double> epoch_losses;  // mean minibatch loss per epoch
};

/// Minibatch SGD with momentum on cross-entropy; BatchNorm layers train on
/// batch statistics and update their running statistics. Sequential and
/// deterministic for a fixed seed. Throws Diverged on a non-finite loss.
TrainResult train_reference(Arch arch, const LabeledDataset& dataset, const TrainConfig& config);

/// Continues training `start` with the same procedure as train_reference.
TrainResult fine_tune(Model start, const LabeledDataset& dataset, const TrainConfig& config);

struct EvalReport {
  std::string model_id;
  std::string scheme;
  int weight_bits = kPassthroughBits;
  int activation_bits = kPassthroughBits;
  std::size_t correct = 0;
  std::size_t sample_count = 0;
  double accuracy = 0.0;  // correct / sample_count
};

/// Top-1 accuracy. Throws EmptyDataset.
EvalReport evaluate(const Model& model, const LabeledDataset& dataset);
EvalReport evaluate(const QuantModel& model, const LabeledDataset& dataset);

struct SensitivityReport {
  std::vector<std::size_t> layers;
  std::string scheme;
  int bits = 8;
  std::vector<double> real;
  std::vector<double> retro;
  std::vector<double> random;
  double d_retro_real = 0.0;
  double d_random_real = 0.0;
};

double l2_distance(std::span<const double> a, std::span<const double> b);

SensitivityReport sensitivity_report(const Model& model, const LabeledDataset& real,
                                     const LabeledDataset& retro, const LabeledDataset& random,
                                     WeightScheme scheme, int bits);

/// Multiplies every other output channel (1, 3, 5, ...) of the Conv2D or
/// Linear layer `layer_index` by `factor`, weights and bias, and compensates
/// in the next BatchNorm (running statistics) or weighted layer (input
/// weights) so the model function is unchanged up to rounding.
Model craft_divergent_channel(const Model& model, std::size_t layer_index, float factor = 100.0f);

/// Replaces `fraction` of the weights of each listed layer with outliers of
/// magnitude `factor` * max|w| and the sign of the original weight.
Model inject_outliers(const Model& model, std::span<const std::size_t> layers, double fraction,
                      float factor, std::uint64_t seed);

}  // namespace retroquant
