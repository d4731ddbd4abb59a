// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/model_io.hpp"

#include <json.hpp>

#include "retroquant/error.hpp"
#include "retroquant/file_util.hpp"

namespace retroquant {

using json = nlohmann::ordered_json;

void save_model(const Model& model, const std::filesystem::path& directory) {
  model.validate();
  json manifest;
  manifest["format"] = kModelFormat;
  manifest["version"] = kModelVersion;
  manifest["name"] = model.name;
  manifest["input_shape"] = model.input_shape;
  manifest["class_count"] = model.class_count;
  manifest["output"] = model.outputs_probabilities() ? "probabilities" : "logits";
  std::string blob;
  json layers = json::array();
  for (const LayerSpec& l : model.layers) {
    json d;
    d["kind"] = layer_kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::Conv2D:
        d["stride"] = l.stride;
        d["padding"] = l.padding;
        break;
      case LayerKind::BatchNorm:
        d["eps"] = json_float(l.eps);
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        d["window"] = l.window;
        d["stride"] = l.stride;
        break;
      default:
        break;
    }
    json params = json::array();
    for (auto name : l.parameter_names()) {
      const Tensor& t = l.parameter(name);
      params.push_back({{"name", name}, {"shape", t.shape()}});
      blob += encode_floats_le(t.data());
    }
    if (!params.empty()) d["params"] = std::move(params);
    layers.push_back(std::move(d));
  }
  manifest["layers"] = std::move(layers);
  manifest["weights_bytes"] = blob.size();
  write_file_atomic(directory / "weights.bin", blob);
  write_file_atomic(directory / "model.json", manifest.dump(2) + "\n");
}

namespace {

template <typename T>
T field(const json& j, const char* key) {
  require(j.contains(key), ErrorKind::FormatError,
          std::string("manifest missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("manifest field '") + key + "': " + e.what());
  }
}

}  // namespace

Model load_model(const std::filesystem::path& directory) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(directory / "model.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("model.json: ") + e.what());
  }
  require(manifest.is_object() && manifest.value("format", "") == kModelFormat,
          ErrorKind::FormatError, "model.json: not a retroquant model manifest");
  const int version = field<int>(manifest, "version");
  require(version == kModelVersion, ErrorKind::FormatError,
          "model.json: unsupported version " + std::to_string(version));

  const std::string blob = read_text_file(directory / "weights.bin");
  const std::size_t declared = field<std::size_t>(manifest, "weights_bytes");
  require(blob.size() == declared, ErrorKind::FormatError,
          "weights.bin has " + std::to_string(blob.size()) + " bytes, manifest declares " +
              std::to_string(declared));
  const std::vector<float> floats = decode_floats_le(blob);

  Model model;
  model.name = field<std::string>(manifest, "name");
  model.input_shape = field<Shape>(manifest, "input_shape");
  model.class_count = field<std::size_t>(manifest, "class_count");
  std::size_t offset = 0;
  for (const json& d : field<json>(manifest, "layers")) {
    const std::string kind_name = field<std::string>(d, "kind");
    const auto kind = parse_layer_kind(kind_name);
    require(kind.has_value(), ErrorKind::FormatError,
            "unknown layer kind '" + kind_name + "'");
    LayerSpec l;
    l.kind = *kind;
    if (d.contains("stride")) l.stride = field<std::size_t>(d, "stride");
    if (d.contains("padding")) l.padding = field<std::size_t>(d, "padding");
    if (d.contains("window")) l.window = field<std::size_t>(d, "window");
    if (d.contains("eps")) l.eps = static_cast<float>(field<double>(d, "eps"));
    const auto names = l.parameter_names();
    const json params = d.contains("params") ? d.at("params") : json::array();
    require(params.size() == names.size(), ErrorKind::FormatError,
            "layer '" + kind_name + "' declares " + std::to_string(params.size()) +
                " parameters, expected " + std::to_string(names.size()));
    for (std::size_t p = 0; p < names.size(); ++p) {
      require(field<std::string>(params[p], "name") == names[p], ErrorKind::FormatError,
              "layer '" + kind_name + "' parameter order mismatch");
      Shape shape = field<Shape>(params[p], "shape");
      const std::size_t count = shape_product(shape);
      require(offset + count <= floats.size(), ErrorKind::FormatError,
              "weights.bin is shorter than the manifest requires");
      l.parameter(names[p]) =
          Tensor(std::move(shape), std::vector<float>(floats.begin() + offset,
                                                      floats.begin() + offset + count));
      offset += count;
    }
    model.layers.push_back(std::move(l));
  }
  require(offset == floats.size(), ErrorKind::FormatError,
          "weights.bin has trailing data beyond the manifest");
  try {
    model.validate();
  } catch (const Error& e) {
    fail(ErrorKind::ShapeMismatch, std::string("inconsistent model: ") + e.what());
  }
  return model;
}

}  // namespace retroquant
