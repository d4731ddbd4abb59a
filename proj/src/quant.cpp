// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "retroquant/error.hpp"
#include "retroquant/file_util.hpp"
#include "retroquant/model_io.hpp"
#include "retroquant/parallel.hpp"

namespace retroquant {

void check_bits(int bits) {
  require(bits >= 2 && bits <= 16, ErrorKind::InvalidArgument,
          "bit width must be in [2, 16], got " + std::to_string(bits));
}

std::int32_t quantize_value(float x, float scale, std::int32_t zero_point, std::int32_t qmax) {
  const double code = std::round(static_cast<double>(x) / scale) + zero_point;
  return static_cast<std::int32_t>(std::clamp(code, 0.0, static_cast<double>(qmax)));
}

float dequantize_value(std::int32_t code, float scale, std::int32_t zero_point) {
  return static_cast<float>(static_cast<double>(code - zero_point) * scale);
}

float fake_quant_value(float x, float scale, std::int32_t zero_point, std::int32_t qmax) {
  return dequantize_value(quantize_value(x, scale, zero_point, qmax), scale, zero_point);
}

AffineQuantParams affine_params(float min, float max, int bits) {
  check_bits(bits);
  require(std::isfinite(min) && std::isfinite(max), ErrorKind::NonFinite,
          "quantization range is not finite");
  require(min <= max, ErrorKind::InvalidArgument, "quantization range has min > max");
  AffineQuantParams p;
  p.bits = bits;
  const double lo = std::min(0.0f, min), hi = std::max(0.0f, max);
  const double qmax = p.qmax();
  if (hi == lo) {
    p.scale = {1.0f};
    p.zero_point = {0};
    return p;
  }
  float scale = static_cast<float>((hi - lo) / qmax);
  if (!(scale > 0.0f)) scale = std::numeric_limits<float>::min();
  p.scale = {scale};
  p.zero_point = {static_cast<std::int32_t>(std::clamp(std::round(-lo * qmax / (hi - lo)),
                                                       0.0, qmax))};
  return p;
}

AffineQuantParams per_channel_params(const Tensor& weights, int bits, std::size_t channel_axis) {
  require(weights.rank() >= 2, ErrorKind::InvalidAxis, "per-channel params need rank >= 2");
  require(channel_axis < weights.rank(), ErrorKind::InvalidAxis, "channel axis out of range");
  const Shape& s = weights.shape();
  const std::size_t channels = s[channel_axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < channel_axis; ++a) outer *= s[a];
  for (std::size_t a = channel_axis + 1; a < s.size(); ++a) inner *= s[a];
  AffineQuantParams p;
  p.bits = bits;
  p.granularity = Granularity::PerChannel;
  p.axis = channel_axis;
  for (std::size_t c = 0; c < channels; ++c) {
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        lo = std::min(lo, weights[base + i]);
        hi = std::max(hi, weights[base + i]);
      }
    }
    const AffineQuantParams ch = affine_params(lo, hi, bits);
    p.scale.push_back(ch.scale[0]);
    p.zero_point.push_back(ch.zero_point[0]);
  }
  return p;
}

AffineQuantParams per_tensor_params(const Tensor& weights, int bits) {
  require(!weights.empty(), ErrorKind::EmptyInput, "empty tensor");
  return affine_params(weights.min(), weights.max(), bits);
}

Tensor fake_quant(const Tensor& x, const AffineQuantParams& params) {
  const std::int32_t qmax = params.qmax();
  Tensor out(x.shape());
  if (params.granularity == Granularity::PerTensor) {
    require(params.channels() == 1, ErrorKind::ChannelMismatch,
            "per-tensor params must hold one scale");
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = fake_quant_value(x[i], params.scale[0], params.zero_point[0], qmax);
    return out;
  }
  require(params.axis < x.rank() && x.dim(params.axis) == params.channels() &&
              params.zero_point.size() == params.channels(),
          ErrorKind::ChannelMismatch,
          "per-channel params hold " + std::to_string(params.channels()) +
              " channels, tensor shape is " + shape_to_string(x.shape()));
  const Shape& s = x.shape();
  const std::size_t channels = s[params.axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < params.axis; ++a) outer *= s[a];
  for (std::size_t a = params.axis + 1; a < s.size(); ++a) inner *= s[a];
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i)
        out[base + i] =
            fake_quant_value(x[base + i], params.scale[c], params.zero_point[c], qmax);
    }
  return out;
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::ShapeMismatch, "MSE of mismatched shapes");
  require(!a.empty(), ErrorKind::EmptyInput, "MSE of empty tensors");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

std::string_view weight_scheme_name(WeightScheme s) noexcept {
  switch (s) {
    case WeightScheme::PerTensor: return "pt";
    case WeightScheme::PerChannel: return "pc";
    case WeightScheme::NonUniform: return "nonuniform";
  }
  return "?";
}

std::optional<WeightScheme> parse_weight_scheme(std::string_view name) noexcept {
  if (name == "pt") return WeightScheme::PerTensor;
  if (name == "pc") return WeightScheme::PerChannel;
  if (name == "nonuniform") return WeightScheme::NonUniform;
  return std::nullopt;
}

LayerWeightQuant quantize_layer_weights(const Model& model, std::size_t layer_index,
                                        WeightScheme scheme, int bits) {
  require(layer_index < model.layers.size() && model.layers[layer_index].quantizable(),
          ErrorKind::NotQuantizable,
          "layer " + std::to_string(layer_index) + " has no quantizable weights");
  const Tensor& w = model.layers[layer_index].weight;
  LayerWeightQuant q;
  q.layer_index = layer_index;
  q.scheme = scheme;
  switch (scheme) {
    case WeightScheme::PerTensor:
      q.affine = per_tensor_params(w, bits);
      q.fake_weight = fake_quant(w, *q.affine);
      break;
    case WeightScheme::PerChannel:
      q.affine = per_channel_params(w, bits, 0);
      q.fake_weight = fake_quant(w, *q.affine);
      break;
    case WeightScheme::NonUniform: {
      check_bits(bits);
      NonUniformResult r = nonuniform_quantize(w, bits);
      q.codebook = std::move(r.codebook);
      q.fake_weight = std::move(r.weights);
      break;
    }
  }
  return q;
}

std::vector<ActivationRange> observe_activation_ranges(const Model& model,
                                                       const LabeledDataset& data) {
  require(data.size() >= 1, ErrorKind::EmptyDataset, "calibration dataset is empty");
  check_batch(model, data.samples);
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (data.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<ActivationRange>> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const Tensor batch =
        data.samples.slice_rows(c * kChunk, std::min(data.size(), (c + 1) * kChunk));
    const std::vector<Tensor> acts = forward_activations(model, batch);
    for (std::size_t i : model.activation_layers())
      partial[c].push_back({i, acts[i + 1].min(), acts[i + 1].max()});
  });
  std::vector<ActivationRange> ranges = std::move(partial[0]);
  for (std::size_t c = 1; c < chunks; ++c) ranges = merge_ranges(ranges, partial[c]);
  return ranges;
}

std::vector<ActivationRange> merge_ranges(std::span<const ActivationRange> a,
                                          std::span<const ActivationRange> b) {
  require(a.size() == b.size(), ErrorKind::LengthMismatch, "range lists differ in length");
  std::vector<ActivationRange> out;
  out.reserve(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    require(a[k].layer_index == b[k].layer_index, ErrorKind::LengthMismatch,
            "range lists cover different points");
    out.push_back({a[k].layer_index, std::min(a[k].min, b[k].min), std::max(a[k].max, b[k].max)});
  }
  return out;
}

ActivationCalibration calibration_from_ranges(std::vector<ActivationRange> ranges,
                                              int activation_bits) {
  ActivationCalibration cal;
  cal.bits = activation_bits;
  if (activation_bits != kPassthroughBits)
    for (const ActivationRange& r : ranges)
      cal.params.push_back(affine_params(r.min, r.max, activation_bits));
  cal.ranges = std::move(ranges);
  return cal;
}

ActivationCalibration calibrate_activations(const Model& model, const LabeledDataset& data,
                                            int activation_bits) {
  if (activation_bits != kPassthroughBits) check_bits(activation_bits);
  return calibration_from_ranges(observe_activation_ranges(model, data), activation_bits);
}

QuantModel build_quant_model(const Model& model, std::span<const WeightScheme> schemes,
                             const ActivationCalibration& calibration, int weight_bits,
                             int activation_bits) {
  model.validate();
  if (weight_bits != kPassthroughBits) check_bits(weight_bits);
  if (activation_bits != kPassthroughBits) check_bits(activation_bits);
  const std::vector<std::size_t> quantizable = model.quantizable_layers();
  require(schemes.size() == quantizable.size(), ErrorKind::IncompleteAssignment,
          "scheme assignment covers " + std::to_string(schemes.size()) + " of " +
              std::to_string(quantizable.size()) + " quantizable layers");
  QuantModel qm;
  qm.base = model;
  qm.weights_model = model;
  qm.weight_bits = weight_bits;
  qm.activation_bits = activation_bits;
  if (qm.weights_enabled()) {
    qm.weights.resize(quantizable.size());
    parallel_for(quantizable.size(), [&](std::size_t k) {
      qm.weights[k] = quantize_layer_weights(model, quantizable[k], schemes[k], weight_bits);
    });
    for (const LayerWeightQuant& q : qm.weights)
      qm.weights_model.layers[q.layer_index].weight = q.fake_weight;
  } else {
    for (std::size_t k = 0; k < quantizable.size(); ++k) {
      LayerWeightQuant q;
      q.layer_index = quantizable[k];
      q.scheme = schemes[k];
      q.fake_weight = model.layers[quantizable[k]].weight;
      qm.weights.push_back(std::move(q));
    }
  }
  if (qm.activations_enabled()) {
    const std::vector<std::size_t> points = model.activation_layers();
    bool covered = calibration.ranges.size() == points.size();
    for (std::size_t k = 0; covered && k < points.size(); ++k)
      covered = calibration.ranges[k].layer_index == points[k];
    require(covered, ErrorKind::IncompleteRanges,
            "calibration covers " + std::to_string(calibration.ranges.size()) + " of " +
                std::to_string(points.size()) + " activation points");
    std::vector<ActivationRange> ranges = calibration.ranges;
    qm.activations = calibration.bits == activation_bits && calibration.params.size() == ranges.size()
                         ? calibration
                         : calibration_from_ranges(std::move(ranges), activation_bits);
  } else {
    qm.activations = calibration;
    qm.activations.params.clear();
    qm.activations.bits = kPassthroughBits;
  }
  return qm;
}

Tensor forward(const QuantModel& model, const Tensor& batch) {
  if (!model.activations_enabled()) return forward(model.weights_model, batch);
  const auto& ranges = model.activations.ranges;
  const auto& params = model.activations.params;
  const ActivationHook hook = [&](std::size_t layer_index, Tensor& out) {
    const auto it = std::find_if(ranges.begin(), ranges.end(), [&](const ActivationRange& r) {
      return r.layer_index == layer_index;
    });
    require(it != ranges.end(), ErrorKind::IncompleteRanges,
            "no activation range for layer " + std::to_string(layer_index));
    out = fake_quant(out, params[static_cast<std::size_t>(it - ranges.begin())]);
  };
  ForwardOptions opts;
  opts.hook = &hook;
  return forward(model.weights_model, batch, opts);
}

namespace {

using json = nlohmann::ordered_json;

json floats_json(std::span<const float> v) {
  json a = json::array();
  for (float f : v) a.push_back(json_float(f));
  return a;
}

json affine_json(const AffineQuantParams& p) {
  json j;
  j["granularity"] = p.granularity == Granularity::PerTensor ? "per_tensor" : "per_channel";
  if (p.granularity == Granularity::PerChannel) j["axis"] = p.axis;
  j["bits"] = p.bits;
  j["scale"] = floats_json(p.scale);
  j["zero_point"] = p.zero_point;
  return j;
}

json codebook_json(const NonUniformCodebook& cb) {
  json j;
  j["bits"] = cb.bits;
  j["quartiles"] = {json_float(static_cast<float>(cb.quartiles.q1)),
                    json_float(static_cast<float>(cb.quartiles.q2)),
                    json_float(static_cast<float>(cb.quartiles.q3))};
  j["fences"] = {json_float(cb.lower_fence), json_float(cb.upper_fence)};
  json clusters = json::array();
  for (const ClusterQuantizer& c : cb.clusters) {
    clusters.push_back({{"lo", json_float(c.lo)},
                        {"hi", json_float(c.hi)},
                        {"steps", c.steps},
                        {"scale", json_float(c.scale)},
                        {"zero_point", c.zero_point},
                        {"anchor", json_float(c.anchor)},
                        {"zero_aligned", c.zero_aligned}});
  }
  j["clusters"] = std::move(clusters);
  return j;
}

template <typename T>
T get(const json& j, const char* key) {
  require(j.is_object() && j.contains(key), ErrorKind::FormatError,
          std::string("quant.json missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("quant.json field '") + key + "': " + e.what());
  }
}

AffineQuantParams affine_from_json(const json& j) {
  AffineQuantParams p;
  const std::string g = get<std::string>(j, "granularity");
  require(g == "per_tensor" || g == "per_channel", ErrorKind::FormatError,
          "quant.json: unknown granularity '" + g + "'");
  p.granularity = g == "per_tensor" ? Granularity::PerTensor : Granularity::PerChannel;
  if (p.granularity == Granularity::PerChannel) p.axis = get<std::size_t>(j, "axis");
  p.bits = get<int>(j, "bits");
  for (double s : get<std::vector<double>>(j, "scale")) p.scale.push_back(static_cast<float>(s));
  p.zero_point = get<std::vector<std::int32_t>>(j, "zero_point");
  require(p.scale.size() == p.zero_point.size() && !p.scale.empty(), ErrorKind::FormatError,
          "quant.json: scale and zero_point lengths differ");
  return p;
}

NonUniformCodebook codebook_from_json(const json& j) {
  NonUniformCodebook cb;
  cb.bits = get<int>(j, "bits");
  const auto q = get<std::vector<double>>(j, "quartiles");
  const auto f = get<std::vector<double>>(j, "fences");
  require(q.size() == 3 && f.size() == 2, ErrorKind::FormatError,
          "quant.json: malformed nonuniform block");
  cb.quartiles = {q[0], q[1], q[2]};
  cb.lower_fence = static_cast<float>(f[0]);
  cb.upper_fence = static_cast<float>(f[1]);
  const json clusters = get<json>(j, "clusters");
  require(clusters.is_array() && clusters.size() == 3, ErrorKind::FormatError,
          "quant.json: nonuniform block needs three clusters");
  for (std::size_t i = 0; i < 3; ++i) {
    const json& c = clusters[i];
    ClusterQuantizer& cq = cb.clusters[i];
    cq.lo = static_cast<float>(get<double>(c, "lo"));
    cq.hi = static_cast<float>(get<double>(c, "hi"));
    cq.steps = get<std::size_t>(c, "steps");
    cq.scale = static_cast<float>(get<double>(c, "scale"));
    cq.zero_point = get<std::int32_t>(c, "zero_point");
    cq.anchor = static_cast<float>(get<double>(c, "anchor"));
    cq.zero_aligned = get<bool>(c, "zero_aligned");
  }
  return cb;
}

}  // namespace

void save_quant_model(const QuantModel& model, const std::filesystem::path& directory) {
  save_model(model.base, directory);
  json j;
  j["format"] = kQuantFormat;
  j["version"] = kQuantVersion;
  j["weight_bits"] = model.weight_bits;
  j["activation_bits"] = model.activation_bits;
  j["seed"] = model.seed;
  json layers = json::array();
  for (const LayerWeightQuant& q : model.weights) {
    json l;
    l["index"] = q.layer_index;
    l["kind"] = layer_kind_name(model.base.layers[q.layer_index].kind);
    l["scheme"] = weight_scheme_name(q.scheme);
    if (q.affine) l["affine"] = affine_json(*q.affine);
    if (q.codebook) l["nonuniform"] = codebook_json(*q.codebook);
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  json acts = json::array();
  for (std::size_t k = 0; k < model.activations.ranges.size(); ++k) {
    const ActivationRange& r = model.activations.ranges[k];
    json a;
    a["index"] = r.layer_index;
    a["min"] = json_float(r.min);
    a["max"] = json_float(r.max);
    if (k < model.activations.params.size()) a["affine"] = affine_json(model.activations.params[k]);
    acts.push_back(std::move(a));
  }
  j["activations"] = std::move(acts);
  write_file_atomic(directory / "quant.json", j.dump(2) + "\n");
}

bool is_quant_model_directory(const std::filesystem::path& directory) {
  return std::filesystem::is_regular_file(directory / "quant.json");
}

QuantModel load_quant_model(const std::filesystem::path& directory) {
  Model base = load_model(directory);
  json j;
  try {
    j = json::parse(read_text_file(directory / "quant.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("quant.json: ") + e.what());
  }
  require(j.is_object() && j.value("format", "") == kQuantFormat, ErrorKind::FormatError,
          "quant.json: not a retroquant quantization manifest");
  const int version = get<int>(j, "version");
  require(version == kQuantVersion, ErrorKind::FormatError,
          "quant.json: unsupported version " + std::to_string(version));

  QuantModel qm;
  qm.weight_bits = get<int>(j, "weight_bits");
  qm.activation_bits = get<int>(j, "activation_bits");
  qm.seed = get<std::uint64_t>(j, "seed");
  qm.weights_model = base;
  for (const json& l : get<json>(j, "layers")) {
    LayerWeightQuant q;
    q.layer_index = get<std::size_t>(l, "index");
    require(q.layer_index < base.layers.size() && base.layers[q.layer_index].quantizable(),
            ErrorKind::FormatError, "quant.json: layer index does not name a quantizable layer");
    const auto scheme = parse_weight_scheme(get<std::string>(l, "scheme"));
    require(scheme.has_value(), ErrorKind::FormatError, "quant.json: unknown weight scheme");
    q.scheme = *scheme;
    const Tensor& w = base.layers[q.layer_index].weight;
    if (l.contains("affine")) {
      q.affine = affine_from_json(l.at("affine"));
      q.fake_weight = fake_quant(w, *q.affine);
    } else if (l.contains("nonuniform")) {
      q.codebook = codebook_from_json(l.at("nonuniform"));
      q.fake_weight = Tensor(w.shape());
      for (std::size_t i = 0; i < w.size(); ++i) q.fake_weight[i] = q.codebook->apply(w[i]);
    } else {
      q.fake_weight = w;
    }
    qm.weights_model.layers[q.layer_index].weight = q.fake_weight;
    qm.weights.push_back(std::move(q));
  }
  require(qm.weights.size() == base.quantizable_layers().size(), ErrorKind::IncompleteAssignment,
          "quant.json does not cover every quantizable layer");
  qm.activations.bits = qm.activation_bits;
  for (const json& a : get<json>(j, "activations")) {
    qm.activations.ranges.push_back({get<std::size_t>(a, "index"),
                                     static_cast<float>(get<double>(a, "min")),
                                     static_cast<float>(get<double>(a, "max"))});
    if (a.contains("affine")) qm.activations.params.push_back(affine_from_json(a.at("affine")));
  }
  if (qm.activations_enabled())
    require(qm.activations.params.size() == qm.activations.ranges.size() &&
                qm.activations.ranges.size() == base.activation_layers().size(),
            ErrorKind::IncompleteRanges, "quant.json does not cover every activation point");
  qm.base = std::move(base);
  return qm;
}

}  // namespace retroquant
