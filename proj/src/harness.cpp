// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "retroquant/error.hpp"
#include "retroquant/hybrid.hpp"
#include "retroquant/parallel.hpp"

namespace retroquant {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kTemplateStream = 0x74706c;
constexpr std::uint64_t kSampleStream = 0x736d70;
constexpr std::uint64_t kGaussianStream = 0x676175;
constexpr std::uint64_t kInitStream = 0x696e6974;
constexpr std::uint64_t kShuffleStream = 0x73687566;
constexpr std::uint64_t kOutlierStream = 0x6f75746c;

constexpr std::size_t kCoarse = 4;

// Bilinear upsampling of a kCoarse x kCoarse grid to h x w.
void upsample(const std::vector<double>& coarse, std::size_t h, std::size_t w, float* out) {
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = h > 1 ? static_cast<double>(y) * (kCoarse - 1) / (h - 1) : 0.0;
    const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(fy), kCoarse - 2);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = w > 1 ? static_cast<double>(x) * (kCoarse - 1) / (w - 1) : 0.0;
      const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(fx), kCoarse - 2);
      const double tx = fx - x0;
      const auto at = [&](std::size_t r, std::size_t c) { return coarse[r * kCoarse + c]; };
      const double top = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
      const double bottom = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
      out[y * w + x] = static_cast<float>(top * (1 - ty) + bottom * ty);
    }
  }
}

void standardize(std::span<float> v) {
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (float x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  for (float& x : v) x = static_cast<float>(sd > 0 ? (x - mean) / sd : 0.0);
}

}  // namespace

Tensor synth_templates(std::size_t class_count, const Shape& input_shape,
                       std::uint64_t template_seed) {
  require(class_count >= 2, ErrorKind::InvalidArgument, "need at least two classes");
  require(!input_shape.empty() && shape_product(input_shape) > 0, ErrorKind::InvalidArgument,
          "input shape is empty");
  const std::size_t per = shape_product(input_shape);
  Shape shape = input_shape;
  shape.insert(shape.begin(), class_count);
  Tensor t(shape);
  auto rng = make_rng(template_seed, kTemplateStream);
  std::normal_distribution<double> normal;
  for (std::size_t k = 0; k < class_count; ++k) {
    float* base = t.data().data() + k * per;
    if (input_shape.size() == 3) {
      const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::vector<double> coarse(kCoarse * kCoarse);
        for (double& v : coarse) v = normal(rng);
        upsample(coarse, h, w, base + ch * h * w);
      }
    } else {
      for (std::size_t i = 0; i < per; ++i) base[i] = static_cast<float>(normal(rng));
    }
    standardize(std::span<float>(base, per));
  }
  return t;
}

LabeledDataset synth_dataset(std::uint64_t seed, std::size_t class_count, std::size_t per_class,
                             const Shape& input_shape, const SynthOptions& options) {
  require(per_class >= 1, ErrorKind::InvalidArgument, "per_class must be at least 1");
  const Tensor templates = synth_templates(class_count, input_shape, options.template_seed);
  const std::size_t per = shape_product(input_shape);
  Shape shape = input_shape;
  shape.insert(shape.begin(), class_count * per_class);
  LabeledDataset ds;
  ds.samples = Tensor(shape);
  ds.class_count = class_count;
  ds.provenance = Provenance::Synthetic;
  ds.seed = seed;
  auto rng = make_rng(seed, kSampleStream);
  std::normal_distribution<float> noise(0.0f, options.noise_std);
  // Unit-variance samples, matching normalized image inputs.
  const float norm = 1.0f / std::sqrt(1.0f + options.noise_std * options.noise_std);
  const auto shift_span = static_cast<long>(options.max_shift);
  std::uniform_int_distribution<long> shift(-shift_span, shift_span);
  const bool spatial = input_shape.size() == 3;
  const std::size_t c = spatial ? input_shape[0] : 1;
  const std::size_t h = spatial ? input_shape[1] : 1;
  const std::size_t w = spatial ? input_shape[2] : per;
  for (std::size_t k = 0; k < class_count; ++k) {
    const float* tmpl = templates.data().data() + k * per;
    for (std::size_t s = 0; s < per_class; ++s) {
      const std::size_t row = k * per_class + s;
      float* out = ds.samples.data().data() + row * per;
      const long dy = spatial ? shift(rng) : 0, dx = spatial ? shift(rng) : 0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const long sy = std::clamp<long>(static_cast<long>(y) - dy, 0, static_cast<long>(h) - 1);
            const long sx = std::clamp<long>(static_cast<long>(x) - dx, 0, static_cast<long>(w) - 1);
            out[(ch * h + y) * w + x] = (tmpl[(ch * h + sy) * w + sx] + noise(rng)) * norm;
          }
      ds.labels.push_back(k);
    }
  }
  return ds;
}

LabeledDataset random_gaussian_dataset(std::uint64_t seed, std::size_t n,
                                       const Shape& input_shape, std::size_t class_count) {
  require(n >= 1, ErrorKind::InvalidArgument, "n must be at least 1");
  require(class_count >= 1, ErrorKind::InvalidArgument, "class count must be positive");
  Shape shape = input_shape;
  shape.insert(shape.begin(), n);
  LabeledDataset ds;
  ds.samples = Tensor(shape);
  ds.class_count = class_count;
  ds.provenance = Provenance::RandomGaussian;
  ds.seed = seed;
  auto rng = make_rng(seed, kGaussianStream);
  std::normal_distribution<float> normal;
  for (float& v : ds.samples.data()) v = normal(rng);
  std::uniform_int_distribution<std::size_t> label(0, class_count - 1);
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(label(rng));
  return ds;
}

std::string_view arch_name(Arch arch) noexcept {
  switch (arch) {
    case Arch::CnnBn: return "cnn_bn";
    case Arch::CnnPlain: return "cnn_plain";
    case Arch::Mlp: return "mlp";
    case Arch::CnnDeep: return "cnn_deep";
  }
  return "?";
}

std::optional<Arch> parse_arch(std::string_view name) noexcept {
  for (Arch a : {Arch::CnnBn, Arch::CnnPlain, Arch::Mlp, Arch::CnnDeep})
    if (arch_name(a) == name) return a;
  return std::nullopt;
}

Model build_arch(Arch arch, const Shape& input_shape, std::size_t class_count,
                 std::uint64_t seed) {
  Model m;
  m.name = std::string(arch_name(arch));
  m.input_shape = input_shape;
  m.class_count = class_count;
  auto& L = m.layers;
  const auto conv_block = [&](std::size_t in, std::size_t out, std::size_t stride, bool bn) {
    L.push_back(LayerSpec::conv2d(in, out, 3, stride, 1));
    if (bn) L.push_back(LayerSpec::batch_norm(out));
    L.push_back(LayerSpec::relu());
  };
  switch (arch) {
    case Arch::CnnBn:
    case Arch::CnnPlain: {
      require(input_shape.size() == 3 && input_shape[1] == 16 && input_shape[2] == 16,
              ErrorKind::ShapeMismatch, "convolutional archs expect [c,16,16] input");
      const bool bn = arch == Arch::CnnBn;
      conv_block(input_shape[0], 16, 1, bn);
      conv_block(16, 32, 2, bn);
      conv_block(32, 64, 2, bn);
      L.push_back(LayerSpec::avg_pool(4, 4));
      L.push_back(LayerSpec::flatten());
      L.push_back(LayerSpec::linear(64, class_count));
      break;
    }
    case Arch::CnnDeep: {
      require(input_shape.size() == 3 && input_shape[1] == 16 && input_shape[2] == 16,
              ErrorKind::ShapeMismatch, "convolutional archs expect [c,16,16] input");
      conv_block(input_shape[0], 8, 1, true);
      conv_block(8, 16, 1, true);
      conv_block(16, 16, 2, true);
      conv_block(16, 32, 1, true);
      conv_block(32, 32, 2, true);
      L.push_back(LayerSpec::avg_pool(4, 4));
      L.push_back(LayerSpec::flatten());
      L.push_back(LayerSpec::linear(32, class_count));
      break;
    }
    case Arch::Mlp: {
      const std::size_t in = shape_product(input_shape);
      L.push_back(LayerSpec::flatten());
      L.push_back(LayerSpec::linear(in, 64));
      L.push_back(LayerSpec::relu());
      L.push_back(LayerSpec::linear(64, 32));
      L.push_back(LayerSpec::relu());
      L.push_back(LayerSpec::linear(32, class_count));
      break;
    }
  }
  auto rng = make_rng(seed, kInitStream);
  for (LayerSpec& l : L) {
    if (!l.quantizable()) continue;
    const std::size_t fan_in = l.weight.size() / l.weight.dim(0);
    std::normal_distribution<float> normal(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    for (float& v : l.weight.data()) v = normal(rng);
  }
  m.validate();
  return m;
}

TrainResult train_reference(Arch arch, const LabeledDataset& dataset, const TrainConfig& config) {
  dataset.validate();
  return fine_tune(build_arch(arch, dataset.sample_shape(), dataset.class_count, config.seed),
                   dataset, config);
}

TrainResult fine_tune(Model start, const LabeledDataset& dataset, const TrainConfig& config) {
  dataset.validate();
  require(config.batch_size >= 1 && config.learning_rate > 0.0, ErrorKind::InvalidArgument,
          "invalid training config");
  TrainResult result;
  result.model = std::move(start);
  Model& model = result.model;
  check_batch(model, dataset.samples);

  std::vector<std::vector<Tensor>> velocity(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    for (auto name : model.layers[i].trainable_names())
      velocity[i].emplace_back(model.layers[i].parameter(name).shape());

  const std::size_t n = dataset.size();
  const std::size_t per = dataset.samples.size() / n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(config.seed, kShuffleStream);
  ForwardOptions opts;
  opts.bn_mode = BnMode::Training;
  const float mom = static_cast<float>(config.bn_momentum);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      Shape shape = dataset.samples.shape();
      shape[0] = count;
      Tensor batch(shape);
      std::vector<std::size_t> labels(count);
      for (std::size_t r = 0; r < count; ++r) {
        const std::size_t src = order[start + r];
        std::copy_n(dataset.samples.data().data() + src * per, per,
                    batch.data().data() + r * per);
        labels[r] = dataset.labels[src];
      }
      const std::vector<Tensor> acts = forward_activations(model, batch, opts);
      ParamGradients grads = param_gradients_from(model, acts, labels, BnMode::Training);
      require(std::isfinite(grads.loss), ErrorKind::Diverged,
              "training loss became non-finite in epoch " + std::to_string(epoch));
      loss_sum += grads.loss;
      ++batches;
      for (std::size_t i = 0; i < model.layers.size(); ++i) {
        LayerSpec& l = model.layers[i];
        if (l.kind == LayerKind::BatchNorm && count > 1) {
          const ChannelStats stats = channel_stats(acts[i], 1);
          for (std::size_t c = 0; c < stats.mean.size(); ++c) {
            l.running_mean[c] = (1 - mom) * l.running_mean[c] + mom * stats.mean[c];
            l.running_var[c] = (1 - mom) * l.running_var[c] + mom * stats.std[c] * stats.std[c];
          }
        }
        const auto names = l.trainable_names();
        for (std::size_t p = 0; p < names.size(); ++p) {
          Tensor& param = l.parameter(names[p]);
          Tensor& vel = velocity[i][p];
          const Tensor& g = grads.layers[i][p];
          for (std::size_t k = 0; k < param.size(); ++k) {
            vel[k] = static_cast<float>(config.momentum * vel[k] + g[k]);
            param[k] = static_cast<float>(param[k] - config.learning_rate * vel[k]);
          }
        }
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(batches);
    require(std::isfinite(mean_loss), ErrorKind::Diverged, "training diverged");
    result.epoch_losses.push_back(mean_loss);
  }
  for (const LayerSpec& l : model.layers)
    for (auto name : l.parameter_names())
      require(l.parameter(name).all_finite(), ErrorKind::Diverged, "non-finite parameters");
  return result;
}

namespace {

template <typename Forward>
std::size_t count_correct(const LabeledDataset& dataset, const Forward& run) {
  constexpr std::size_t kChunk = 128;
  const std::size_t chunks = (dataset.size() + kChunk - 1) / kChunk;
  std::vector<std::size_t> correct(chunks, 0);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunk, end = std::min(dataset.size(), begin + kChunk);
    const std::vector<std::size_t> pred = argmax_rows(run(dataset.samples.slice_rows(begin, end)));
    for (std::size_t r = 0; r < pred.size(); ++r)
      correct[c] += pred[r] == dataset.labels[begin + r];
  });
  return std::accumulate(correct.begin(), correct.end(), std::size_t{0});
}

EvalReport make_report(std::string model_id, std::string scheme, int wbits, int abits,
                       std::size_t correct, std::size_t n) {
  EvalReport r;
  r.model_id = std::move(model_id);
  r.scheme = std::move(scheme);
  r.weight_bits = wbits;
  r.activation_bits = abits;
  r.correct = correct;
  r.sample_count = n;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return r;
}

std::string scheme_description(const QuantModel& qm) {
  if (!qm.weights_enabled() && !qm.activations_enabled()) return "fp32";
  std::set<std::string_view> names;
  for (const LayerWeightQuant& w : qm.weights) names.insert(weight_scheme_name(w.scheme));
  if (names.size() == 1) return std::string(*names.begin());
  return "hybrid";
}

}  // namespace

EvalReport evaluate(const Model& model, const LabeledDataset& dataset) {
  require(dataset.size() >= 1, ErrorKind::EmptyDataset, "evaluation dataset is empty");
  check_batch(model, dataset.samples);
  const std::size_t correct =
      count_correct(dataset, [&](const Tensor& batch) { return forward(model, batch); });
  return make_report(model.name, "fp32", kPassthroughBits, kPassthroughBits, correct,
                     dataset.size());
}

EvalReport evaluate(const QuantModel& model, const LabeledDataset& dataset) {
  require(dataset.size() >= 1, ErrorKind::EmptyDataset, "evaluation dataset is empty");
  check_batch(model.base, dataset.samples);
  const std::size_t correct =
      count_correct(dataset, [&](const Tensor& batch) { return forward(model, batch); });
  return make_report(model.base.name, scheme_description(model), model.weight_bits,
                     model.activation_bits, correct, dataset.size());
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::LengthMismatch, "profiles differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sum);
}

SensitivityReport sensitivity_report(const Model& model, const LabeledDataset& real,
                                     const LabeledDataset& retro, const LabeledDataset& random,
                                     WeightScheme scheme, int bits) {
  SensitivityReport r;
  r.layers = model.quantizable_layers();
  r.scheme = std::string(weight_scheme_name(scheme));
  r.bits = bits;
  r.real = sensitivity_profile(model, real, scheme, bits);
  r.retro = sensitivity_profile(model, retro, scheme, bits);
  r.random = sensitivity_profile(model, random, scheme, bits);
  r.d_retro_real = l2_distance(r.retro, r.real);
  r.d_random_real = l2_distance(r.random, r.real);
  return r;
}

Model craft_divergent_channel(const Model& model, std::size_t layer_index, float factor) {
  require(layer_index < model.layers.size() && model.layers[layer_index].quantizable(),
          ErrorKind::NotQuantizable, "crafted layer must be Conv2D or Linear");
  require(factor > 0.0f && std::isfinite(factor), ErrorKind::InvalidArgument,
          "factor must be positive");
  Model out = model;
  LayerSpec& target = out.layers[layer_index];
  const std::size_t channels = target.weight.dim(0);
  const std::size_t per = target.weight.size() / channels;
  for (std::size_t c = 1; c < channels; c += 2) {
    for (std::size_t k = 0; k < per; ++k) target.weight[c * per + k] *= factor;
    target.bias[c] *= factor;
  }
  bool flattened = false;
  for (std::size_t j = layer_index + 1; j < out.layers.size(); ++j) {
    LayerSpec& next = out.layers[j];
    switch (next.kind) {
      case LayerKind::ReLU:
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        continue;
      case LayerKind::Flatten:
        flattened = true;
        continue;
      case LayerKind::BatchNorm:
        for (std::size_t c = 1; c < channels; c += 2) {
          next.running_mean[c] *= factor;
          next.running_var[c] *= factor * factor;
        }
        return out;
      case LayerKind::Conv2D: {
        const std::size_t o = next.weight.dim(0), in = next.weight.dim(1);
        const std::size_t k2 = next.weight.dim(2) * next.weight.dim(3);
        for (std::size_t a = 0; a < o; ++a)
          for (std::size_t c = 1; c < in; c += 2)
            for (std::size_t k = 0; k < k2; ++k) next.weight[(a * in + c) * k2 + k] /= factor;
        return out;
      }
      case LayerKind::Linear: {
        const std::size_t o = next.weight.dim(0), in = next.weight.dim(1);
        const std::size_t inner = flattened ? in / channels : 1;
        for (std::size_t a = 0; a < o; ++a)
          for (std::size_t c = 1; c < channels; c += 2)
            for (std::size_t k = 0; k < inner; ++k) next.weight[a * in + c * inner + k] /= factor;
        return out;
      }
      case LayerKind::Softmax:
        break;
    }
    break;
  }
  fail(ErrorKind::InvalidArgument, "crafted layer has no downstream layer to compensate in");
}

Model inject_outliers(const Model& model, std::span<const std::size_t> layers, double fraction,
                      float factor, std::uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::InvalidArgument,
          "fraction must be in (0, 1]");
  Model out = model;
  auto rng = make_rng(seed, kOutlierStream);
  for (std::size_t li : layers) {
    require(li < out.layers.size() && out.layers[li].quantizable(), ErrorKind::NotQuantizable,
            "outliers can only be injected into Conv2D or Linear weights");
    Tensor& w = out.layers[li].weight;
    float peak = 0.0f;
    for (float v : w.data()) peak = std::max(peak, std::fabs(v));
    std::vector<std::size_t> idx(w.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(w.size()))));
    for (std::size_t k = 0; k < count; ++k)
      w[idx[k]] = std::copysign(factor * peak, w[idx[k]]);
  }
  return out;
}

}  // namespace retroquant
