// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "retroquant/dataset.hpp"
#include "retroquant/model.hpp"

namespace retroquant {

/// Relative weights of the three synthesis loss terms.
struct LossWeights {
  double bn = 1.0;
  double gaussian = 1.0;
  double cls = 1.0;
};

/// Settings for synthesizing one class-conditioned batch from a frozen model.
struct GenConfig {
  std::size_t epochs = 500;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t target_class = 0;
  std::uint64_t seed = 42;
  LossWeights loss_weights;

  /// Throws InvalidArgument when the config cannot be used with `model`.
  void validate(const Model& model) const;
};

struct LossBreakdown {
  double l_bn = 0.0;
  double l_g = 0.0;
  double l_c = 0.0;
  double total = 0.0;
};

/// Squared L2 distance between the means plus that between the standard
/// deviations. Throws LengthMismatch.
double stat_loss(const ChannelStats& observed, const ChannelStats& reference);

/// Reference statistics of a BatchNorm layer: running mean and sqrt(running var).
ChannelStats batch_norm_reference(const LayerSpec& layer);

/// Mean squared error between `target` and every row of `probabilities`,
/// averaged over the batch.
double class_loss(const Tensor& probabilities, const Tensor& target);

/// Evaluates the synthesis objective from a captured forward pass:
///   l_bn: stat_loss of every BatchNorm input against its running statistics
///   l_g:  stat_loss of the pooled input statistics against (0, 1)
///   l_c:  class_loss of softmax(logits) against target
/// Throws TraceMismatch when the trace's BatchNorm entries don't match the model.
LossBreakdown total_loss(const ActivationTrace& trace, const Model& model,
                         const Tensor& input, const Tensor& logits,
                         const Tensor& target, const LossWeights& weights);

/// Random target vector with entry `target_class` = 1 and all others drawn
/// from U(0, 0.5), so the argmax is strict and unique.
Tensor make_target(std::size_t class_count, std::size_t target_class, std::uint64_t seed);

struct GenerationResult {
  Tensor batch;
  /// The class-score target the batch was fitted to.
  Tensor target;
  /// Loss before each update, plus one final entry after the last update.
  std::vector<LossBreakdown> history;
};

/// Gradient descent (Adam) on a Gaussian-initialised input batch so that the
/// frozen model's BatchNorm input statistics, pooled input statistics and
/// class scores match their targets. Throws DivergedLoss on a non-finite loss.
GenerationResult synthesize_class(const Model& model, const GenConfig& config);

/// Same as synthesize_class, returning only the batch.
Tensor generate_class_batch(const Model& model, const GenConfig& config);

/// `per_class` samples for every class, labelled with their target class and
/// ordered by class. Classes run concurrently, each with its own RNG stream.
LabeledDataset generate_dataset(const Model& model, std::size_t per_class,
                                const GenConfig& config_template);

}  // namespace retroquant
