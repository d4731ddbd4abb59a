// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "retroquant/dataset.hpp"
#include "retroquant/model.hpp"
#include "retroquant/quant.hpp"

namespace retroquant {

/// KL divergence sum p_i ln(p_i / q_i) in nats, with both inputs clamped
/// below at 1e-12. Throws LengthMismatch.
double kld(std::span<const float> p, std::span<const float> q);

/// FP32 intermediates and output probabilities of a calibration set, reused
/// across every per-layer sensitivity query.
class SensitivityContext {
 public:
  /// Throws EmptyDataset or ShapeMismatch.
  SensitivityContext(const Model& model, const LabeledDataset& calib);

  const Model& model() const noexcept { return *model_; }
  std::size_t sample_count() const noexcept { return samples_; }

  /// Mean kld(FP32 || Aux) over the calibration samples, where Aux has only
  /// layer `layer_index`'s weights fake-quantized under `scheme`.
  /// Throws NotQuantizable.
  double layer_sensitivity(std::size_t layer_index, WeightScheme scheme, int bits) const;

 private:
  struct Chunk {
    std::vector<Tensor> activations;  // [i] is the input to layer i
    Tensor probabilities;
  };
  const Model* model_;
  std::size_t samples_ = 0;
  std::vector<Chunk> chunks_;
};

double layer_sensitivity(const Model& model, std::size_t layer_index, WeightScheme scheme,
                         const LabeledDataset& calib, int bits);

/// Sensitivity of every quantizable layer, in layer order.
std::vector<double> sensitivity_profile(const Model& model, const LabeledDataset& calib,
                                        WeightScheme scheme, int bits);

struct LayerDecision {
  std::size_t layer_index = 0;
  LayerKind kind = LayerKind::Conv2D;
  double error_pt = 0.0;
  double error_pc = 0.0;
  WeightScheme label = WeightScheme::PerChannel;
};

struct SchemeAssignment {
  std::vector<LayerDecision> decisions;
  double threshold = 0.0;

  /// Labels in quantizable-layer order, as build_quant_model expects.
  std::vector<WeightScheme> schemes() const;
};

/// PT when error_pt - error_pc < threshold, otherwise PC.
SchemeAssignment apply_threshold(std::vector<LayerDecision> decisions, double threshold);

/// Measures PT and PC sensitivity of every quantizable layer against the
/// FP32 model, then thresholds. Throws InvalidArgument for a NaN threshold.
SchemeAssignment hybrid_assign(const Model& model, const LabeledDataset& calib,
                               double threshold, int bits);

struct PcFraction {
  std::size_t pc_count = 0;
  std::size_t total = 0;
  double fraction = 0.0;
};

PcFraction pc_layer_fraction(const SchemeAssignment& assignment);

/// `hybrid.json`: threshold, bits and per-layer {index, kind, error_pt, error_pc, label}.
std::string hybrid_json(const SchemeAssignment& assignment, int bits, std::uint64_t seed);
/// CSV with header `layer,error_pt,error_pc,label`.
std::string hybrid_csv(const SchemeAssignment& assignment);

}  // namespace retroquant
