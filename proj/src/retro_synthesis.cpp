// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/retro_synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "retroquant/error.hpp"
#include "retroquant/parallel.hpp"

namespace retroquant {

void GenConfig::validate(const Model& model) const {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::InvalidArgument,
          "learning rate must be positive");
  require(batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be positive");
  require(target_class < model.class_count, ErrorKind::InvalidArgument,
          "target class " + std::to_string(target_class) + " >= class count " +
              std::to_string(model.class_count));
  const auto& w = loss_weights;
  require(w.bn >= 0.0 && w.gaussian >= 0.0 && w.cls >= 0.0, ErrorKind::InvalidArgument,
          "loss weights must be non-negative");
  require(w.bn > 0.0 || w.gaussian > 0.0 || w.cls > 0.0, ErrorKind::InvalidArgument,
          "at least one loss weight must be positive");
}

double stat_loss(const ChannelStats& observed, const ChannelStats& reference) {
  require(observed.mean.size() == reference.mean.size() &&
              observed.std.size() == reference.std.size() &&
              observed.mean.size() == observed.std.size(),
          ErrorKind::LengthMismatch,
          "statistics lengths differ: " + std::to_string(observed.mean.size()) + " vs " +
              std::to_string(reference.mean.size()));
  double loss = 0.0;
  for (std::size_t c = 0; c < observed.mean.size(); ++c) {
    const double dm = static_cast<double>(observed.mean[c]) - reference.mean[c];
    const double ds = static_cast<double>(observed.std[c]) - reference.std[c];
    loss += dm * dm + ds * ds;
  }
  return loss;
}

ChannelStats batch_norm_reference(const LayerSpec& layer) {
  require(layer.kind == LayerKind::BatchNorm, ErrorKind::InvalidArgument,
          "not a batch-norm layer");
  ChannelStats ref;
  ref.mean.assign(layer.running_mean.data().begin(), layer.running_mean.data().end());
  ref.std.resize(layer.running_var.size());
  for (std::size_t c = 0; c < ref.std.size(); ++c)
    ref.std[c] = std::sqrt(layer.running_var[c]);
  return ref;
}

double class_loss(const Tensor& probabilities, const Tensor& target) {
  require(probabilities.rank() == 2 && probabilities.shape()[1] == target.size(),
          ErrorKind::ShapeMismatch, "target length does not match class count");
  const std::size_t n = probabilities.shape()[0], k = target.size();
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < k; ++j) {
      const double d = static_cast<double>(probabilities[r * k + j]) - target[j];
      loss += d * d;
    }
  return loss / static_cast<double>(n * k);
}

namespace {

ChannelStats global_stats(const Tensor& t) {
  return channel_stats(t.reshaped({t.size(), 1}), 1);
}

ChannelStats unit_gaussian() { return {{0.0f}, {1.0f}}; }

Tensor probabilities_of(const Model& model, const Tensor& outputs) {
  return model.outputs_probabilities() ? outputs : softmax_rows(outputs);
}

// Gradient of stat_loss(channel_stats(x, 1), reference) with respect to x.
Tensor stat_loss_grad(const Tensor& x, const ChannelStats& observed,
                      const ChannelStats& reference, double weight) {
  const std::size_t outer = x.shape()[0], channels = x.shape()[1];
  const std::size_t inner = x.size() / (outer * channels);
  const double m = static_cast<double>(outer * inner);
  Tensor g(x.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const double mu = observed.mean[c], sigma = observed.std[c];
    const double a = weight * 2.0 * (mu - reference.mean[c]) / m;
    const double b = sigma > 0.0 ? weight * 2.0 * (sigma - reference.std[c]) / (m * sigma) : 0.0;
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i)
        g[base + i] = static_cast<float>(a + b * (x[base + i] - mu));
    }
  }
  return g;
}

struct Objective {
  LossBreakdown loss;
  std::vector<ActivationGrad> grads;
};

Objective evaluate_objective(const Model& model, std::span<const Tensor> acts,
                             const Tensor& target, const LossWeights& w, bool want_grads) {
  Objective obj;
  const std::size_t out_index = model.layers.size();
  for (std::size_t i : model.batch_norm_layers()) {
    const ChannelStats observed = channel_stats(acts[i], 1);
    const ChannelStats reference = batch_norm_reference(model.layers[i]);
    obj.loss.l_bn += stat_loss(observed, reference);
    if (want_grads && w.bn > 0.0)
      obj.grads.push_back({i, stat_loss_grad(acts[i], observed, reference, w.bn)});
  }

  const Tensor& input = acts[0];
  const ChannelStats observed = global_stats(input);
  obj.loss.l_g = stat_loss(observed, unit_gaussian());
  if (want_grads && w.gaussian > 0.0) {
    Tensor flat = input.reshaped({input.size(), 1});
    Tensor g = stat_loss_grad(flat, observed, unit_gaussian(), w.gaussian);
    obj.grads.push_back({0, g.reshaped(input.shape())});
  }

  const Tensor& outputs = acts[out_index];
  const Tensor probs = probabilities_of(model, outputs);
  obj.loss.l_c = class_loss(probs, target);
  if (want_grads && w.cls > 0.0) {
    const std::size_t n = probs.shape()[0], k = probs.shape()[1];
    const double scale = w.cls * 2.0 / static_cast<double>(n * k);
    Tensor g(probs.shape());
    for (std::size_t r = 0; r < n; ++r) {
      if (model.outputs_probabilities()) {
        for (std::size_t j = 0; j < k; ++j)
          g[r * k + j] = static_cast<float>(scale * (probs[r * k + j] - target[j]));
      } else {
        // Chain through the softmax Jacobian: dz = p * (dp - <dp, p>).
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          dot += scale * (probs[r * k + j] - target[j]) * probs[r * k + j];
        for (std::size_t j = 0; j < k; ++j) {
          const double dp = scale * (probs[r * k + j] - target[j]);
          g[r * k + j] = static_cast<float>(probs[r * k + j] * (dp - dot));
        }
      }
    }
    obj.grads.push_back({out_index, std::move(g)});
  }
  obj.loss.total = w.bn * obj.loss.l_bn + w.gaussian * obj.loss.l_g + w.cls * obj.loss.l_c;
  return obj;
}

std::seed_seq make_seed_seq(std::uint64_t seed, std::uint64_t stream) {
  return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(stream),
                       static_cast<std::uint32_t>(stream >> 32)};
}

}  // namespace

LossBreakdown total_loss(const ActivationTrace& trace, const Model& model,
                         const Tensor& input, const Tensor& logits,
                         const Tensor& target, const LossWeights& weights) {
  const std::vector<std::size_t> bn_layers = model.batch_norm_layers();
  std::vector<const TracePoint*> bn_points;
  for (const TracePoint& p : trace)
    if (p.kind == TracePointKind::BatchNormInput) bn_points.push_back(&p);
  require(bn_points.size() == bn_layers.size(), ErrorKind::TraceMismatch,
          "trace has " + std::to_string(bn_points.size()) + " batch-norm entries, model has " +
              std::to_string(bn_layers.size()));
  LossBreakdown out;
  for (std::size_t k = 0; k < bn_layers.size(); ++k) {
    require(bn_points[k]->layer_index == bn_layers[k], ErrorKind::TraceMismatch,
            "trace entry does not belong to batch-norm layer " + std::to_string(bn_layers[k]));
    out.l_bn += stat_loss(bn_points[k]->stats, batch_norm_reference(model.layers[bn_layers[k]]));
  }
  out.l_g = stat_loss(global_stats(input), unit_gaussian());
  out.l_c = class_loss(probabilities_of(model, logits), target);
  out.total = weights.bn * out.l_bn + weights.gaussian * out.l_g + weights.cls * out.l_c;
  return out;
}

Tensor make_target(std::size_t class_count, std::size_t target_class, std::uint64_t seed) {
  require(target_class < class_count, ErrorKind::InvalidArgument,
          "target class out of range");
  std::seed_seq seq = make_seed_seq(seed, 0x7461726765747ULL);
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<float> dist(0.0f, 0.5f);
  Tensor t({class_count});
  for (std::size_t j = 0; j < class_count; ++j) t[j] = dist(rng);
  t[target_class] = 1.0f;
  return t;
}

GenerationResult synthesize_class(const Model& model, const GenConfig& config) {
  config.validate(model);
  std::seed_seq seq = make_seed_seq(config.seed, config.target_class);
  std::mt19937_64 rng(seq);
  std::normal_distribution<float> normal(0.0f, 1.0f);

  Shape shape = model.input_shape;
  shape.insert(shape.begin(), config.batch_size);
  GenerationResult result;
  result.batch = Tensor(shape);
  for (float& v : result.batch.data()) v = normal(rng);
  result.target = make_target(model.class_count, config.target_class, rng());
  const Tensor& target = result.target;

  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::vector<double> m(result.batch.size(), 0.0), v(result.batch.size(), 0.0);
  const auto check = [&](const LossBreakdown& l, std::size_t epoch) {
    require(std::isfinite(l.total), ErrorKind::DivergedLoss,
            "synthesis loss became non-finite at epoch " + std::to_string(epoch) +
                " (learning rate too high?)");
  };
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<Tensor> acts = forward_activations(model, result.batch);
    Objective obj = evaluate_objective(model, acts, target, config.loss_weights, true);
    check(obj.loss, epoch);
    result.history.push_back(obj.loss);
    const Tensor grad = backward_to_input(model, acts, obj.grads);
    const double t = static_cast<double>(epoch + 1);
    const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double g = grad[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double step = config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_eps);
      result.batch[i] = static_cast<float>(result.batch[i] - step);
    }
    require(result.batch.all_finite(), ErrorKind::DivergedLoss,
            "synthesized batch became non-finite at epoch " + std::to_string(epoch));
  }
  const std::vector<Tensor> acts = forward_activations(model, result.batch);
  Objective final_obj = evaluate_objective(model, acts, target, config.loss_weights, false);
  check(final_obj.loss, config.epochs);
  result.history.push_back(final_obj.loss);
  return result;
}

Tensor generate_class_batch(const Model& model, const GenConfig& config) {
  return synthesize_class(model, config).batch;
}

LabeledDataset generate_dataset(const Model& model, std::size_t per_class,
                                const GenConfig& config_template) {
  require(per_class >= 1, ErrorKind::InvalidArgument, "per_class must be at least 1");
  const std::size_t chunk = std::max<std::size_t>(1, config_template.batch_size);
  const std::size_t chunks_per_class = (per_class + chunk - 1) / chunk;
  const std::size_t tasks = model.class_count * chunks_per_class;
  std::vector<Tensor> parts(tasks);
  parallel_for(tasks, [&](std::size_t task) {
    const std::size_t cls = task / chunks_per_class, j = task % chunks_per_class;
    GenConfig cfg = config_template;
    cfg.target_class = cls;
    cfg.batch_size = std::min(chunk, per_class - j * chunk);
    cfg.seed = config_template.seed + j * 0x9E3779B97F4A7C15ULL;
    try {
      parts[task] = generate_class_batch(model, cfg);
    } catch (const Error& e) {
      fail(e.kind(), "class " + std::to_string(cls) + ": " + e.what());
    }
  });
  LabeledDataset ds;
  ds.samples = concat_rows(parts);
  ds.class_count = model.class_count;
  ds.provenance = Provenance::Retro;
  ds.seed = config_template.seed;
  for (std::size_t c = 0; c < model.class_count; ++c)
    ds.labels.insert(ds.labels.end(), per_class, c);
  return ds;
}

}  // namespace retroquant
