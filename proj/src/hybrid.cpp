// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/hybrid.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "retroquant/error.hpp"
#include "retroquant/file_util.hpp"
#include "retroquant/parallel.hpp"

namespace retroquant {

namespace {

constexpr double kClampFloor = 1e-12;
constexpr std::size_t kChunk = 64;

Tensor probabilities(const Model& model, const Tensor& outputs) {
  return model.outputs_probabilities() ? outputs : softmax_rows(outputs);
}

double row_kld_sum(const Tensor& p, const Tensor& q) {
  const std::size_t n = p.shape()[0], k = p.shape()[1];
  double sum = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    sum += kld(p.data().subspan(r * k, k), q.data().subspan(r * k, k));
  return sum;
}

}  // namespace

double kld(std::span<const float> p, std::span<const float> q) {
  require(p.size() == q.size(), ErrorKind::LengthMismatch,
          "distributions differ in length: " + std::to_string(p.size()) + " vs " +
              std::to_string(q.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = std::max<double>(p[i], kClampFloor);
    const double qi = std::max<double>(q[i], kClampFloor);
    sum += pi * std::log(pi / qi);
  }
  return std::max(sum, 0.0);
}

SensitivityContext::SensitivityContext(const Model& model, const LabeledDataset& calib)
    : model_(&model), samples_(calib.size()) {
  require(samples_ >= 1, ErrorKind::EmptyDataset, "calibration dataset is empty");
  check_batch(model, calib.samples);
  chunks_.resize((samples_ + kChunk - 1) / kChunk);
  parallel_for(chunks_.size(), [&](std::size_t c) {
    Chunk& chunk = chunks_[c];
    chunk.activations = forward_activations(
        model, calib.samples.slice_rows(c * kChunk, std::min(samples_, (c + 1) * kChunk)));
    chunk.probabilities = probabilities(model, chunk.activations.back());
    chunk.activations.pop_back();
  });
}

double SensitivityContext::layer_sensitivity(std::size_t layer_index, WeightScheme scheme,
                                             int bits) const {
  const Model& model = *model_;
  LayerSpec aux = model.layers[layer_index < model.layers.size() ? layer_index : 0];
  require(layer_index < model.layers.size() && aux.quantizable(), ErrorKind::NotQuantizable,
          "layer " + std::to_string(layer_index) + " has no quantizable weights");
  aux.weight = quantize_layer_weights(model, layer_index, scheme, bits).fake_weight;
  std::vector<double> sums(chunks_.size());
  parallel_for(chunks_.size(), [&](std::size_t c) {
    const Chunk& chunk = chunks_[c];
    Tensor out = forward_from(model, layer_index + 1,
                              layer_forward(aux, chunk.activations[layer_index]));
    sums[c] = row_kld_sum(chunk.probabilities, probabilities(model, out));
  });
  double total = 0.0;
  for (double s : sums) total += s;
  return total / static_cast<double>(samples_);
}

double layer_sensitivity(const Model& model, std::size_t layer_index, WeightScheme scheme,
                         const LabeledDataset& calib, int bits) {
  require(layer_index < model.layers.size() && model.layers[layer_index].quantizable(),
          ErrorKind::NotQuantizable,
          "layer " + std::to_string(layer_index) + " has no quantizable weights");
  return SensitivityContext(model, calib).layer_sensitivity(layer_index, scheme, bits);
}

std::vector<double> sensitivity_profile(const Model& model, const LabeledDataset& calib,
                                        WeightScheme scheme, int bits) {
  const SensitivityContext ctx(model, calib);
  std::vector<double> profile;
  for (std::size_t i : model.quantizable_layers())
    profile.push_back(ctx.layer_sensitivity(i, scheme, bits));
  return profile;
}

std::vector<WeightScheme> SchemeAssignment::schemes() const {
  std::vector<WeightScheme> out;
  out.reserve(decisions.size());
  for (const LayerDecision& d : decisions) out.push_back(d.label);
  return out;
}

SchemeAssignment apply_threshold(std::vector<LayerDecision> decisions, double threshold) {
  require(!std::isnan(threshold), ErrorKind::InvalidArgument, "threshold is NaN");
  for (LayerDecision& d : decisions)
    d.label = d.error_pt - d.error_pc < threshold ? WeightScheme::PerTensor
                                                  : WeightScheme::PerChannel;
  return {std::move(decisions), threshold};
}

SchemeAssignment hybrid_assign(const Model& model, const LabeledDataset& calib,
                               double threshold, int bits) {
  require(!std::isnan(threshold), ErrorKind::InvalidArgument, "threshold is NaN");
  const SensitivityContext ctx(model, calib);
  std::vector<LayerDecision> decisions;
  for (std::size_t i : model.quantizable_layers()) {
    LayerDecision d;
    d.layer_index = i;
    d.kind = model.layers[i].kind;
    d.error_pt = ctx.layer_sensitivity(i, WeightScheme::PerTensor, bits);
    d.error_pc = ctx.layer_sensitivity(i, WeightScheme::PerChannel, bits);
    decisions.push_back(d);
  }
  return apply_threshold(std::move(decisions), threshold);
}

PcFraction pc_layer_fraction(const SchemeAssignment& assignment) {
  PcFraction f;
  f.total = assignment.decisions.size();
  f.pc_count = static_cast<std::size_t>(
      std::count_if(assignment.decisions.begin(), assignment.decisions.end(),
                    [](const LayerDecision& d) { return d.label == WeightScheme::PerChannel; }));
  f.fraction = f.total ? static_cast<double>(f.pc_count) / static_cast<double>(f.total) : 0.0;
  return f;
}

std::string hybrid_json(const SchemeAssignment& assignment, int bits, std::uint64_t seed) {
  nlohmann::ordered_json j;
  if (std::isfinite(assignment.threshold))
    j["threshold"] = json_double(assignment.threshold);
  else
    j["threshold"] = assignment.threshold > 0 ? "inf" : "-inf";
  j["bits"] = bits;
  j["seed"] = seed;
  const PcFraction f = pc_layer_fraction(assignment);
  j["pc_count"] = f.pc_count;
  j["layer_count"] = f.total;
  j["pc_fraction"] = json_double(f.fraction);
  auto layers = nlohmann::ordered_json::array();
  for (const LayerDecision& d : assignment.decisions)
    layers.push_back({{"index", d.layer_index},
                      {"kind", layer_kind_name(d.kind)},
                      {"error_pt", json_double(d.error_pt)},
                      {"error_pc", json_double(d.error_pc)},
                      {"label", d.label == WeightScheme::PerTensor ? "PT" : "PC"}});
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

std::string hybrid_csv(const SchemeAssignment& assignment) {
  std::string out = "layer,error_pt,error_pc,label\n";
  for (const LayerDecision& d : assignment.decisions)
    out += std::to_string(d.layer_index) + "," + format_g9(d.error_pt) + "," +
           format_g9(d.error_pc) + "," + (d.label == WeightScheme::PerTensor ? "PT" : "PC") +
           "\n";
  return out;
}

}  // namespace retroquant
