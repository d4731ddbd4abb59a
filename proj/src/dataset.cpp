// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/dataset.hpp"

#include <json.hpp>

#include "retroquant/error.hpp"
#include "retroquant/file_util.hpp"

namespace retroquant {

using json = nlohmann::ordered_json;

std::string_view provenance_name(Provenance p) noexcept {
  switch (p) {
    case Provenance::Synthetic: return "synthetic";
    case Provenance::Retro: return "retro";
    case Provenance::RandomGaussian: return "random-gaussian";
  }
  return "unknown";
}

std::optional<Provenance> parse_provenance(std::string_view name) noexcept {
  for (Provenance p : {Provenance::Synthetic, Provenance::Retro, Provenance::RandomGaussian})
    if (provenance_name(p) == name) return p;
  return std::nullopt;
}

Shape LabeledDataset::sample_shape() const {
  if (samples.rank() == 0) return {};
  return Shape(samples.shape().begin() + 1, samples.shape().end());
}

void LabeledDataset::validate() const {
  require(!labels.empty(), ErrorKind::EmptyDataset, "dataset is empty");
  require(samples.rank() >= 2 && samples.shape()[0] == labels.size(),
          ErrorKind::ShapeMismatch,
          "dataset has " + std::to_string(labels.size()) + " labels but samples " +
              shape_to_string(samples.shape()));
  for (std::size_t l : labels)
    require(l < class_count, ErrorKind::InvalidArgument,
            "label " + std::to_string(l) + " >= class count " + std::to_string(class_count));
}

LabeledDataset LabeledDataset::slice(std::size_t begin, std::size_t end) const {
  LabeledDataset out;
  out.samples = samples.slice_rows(begin, end);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.class_count = class_count;
  out.provenance = provenance;
  out.seed = seed;
  return out;
}

LabeledDataset concat_datasets(std::span<const LabeledDataset> parts) {
  require(!parts.empty(), ErrorKind::EmptyDataset, "nothing to concatenate");
  std::vector<Tensor> tensors;
  LabeledDataset out;
  out.class_count = parts[0].class_count;
  out.provenance = parts[0].provenance;
  out.seed = parts[0].seed;
  for (const auto& p : parts) {
    require(p.class_count == out.class_count, ErrorKind::InvalidArgument,
            "datasets disagree on class count");
    tensors.push_back(p.samples);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.samples = concat_rows(tensors);
  return out;
}

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& directory) {
  dataset.validate();
  json meta;
  meta["format"] = kDatasetFormat;
  meta["version"] = kDatasetVersion;
  meta["count"] = dataset.size();
  meta["sample_shape"] = dataset.sample_shape();
  meta["class_count"] = dataset.class_count;
  meta["provenance"] = provenance_name(dataset.provenance);
  meta["seed"] = dataset.seed;
  meta["labels"] = dataset.labels;
  write_file_atomic(directory / "data.bin", encode_floats_le(dataset.samples.data()));
  write_file_atomic(directory / "dataset.json", meta.dump(2) + "\n");
}

LabeledDataset load_dataset(const std::filesystem::path& directory) {
  json meta;
  try {
    meta = json::parse(read_text_file(directory / "dataset.json"));
    require(meta.is_object() && meta.value("format", "") == kDatasetFormat,
            ErrorKind::FormatError, "dataset.json: not a retroquant dataset");
    require(meta.at("version").get<int>() == kDatasetVersion, ErrorKind::FormatError,
            "dataset.json: unsupported version");
    LabeledDataset ds;
    const auto count = meta.at("count").get<std::size_t>();
    Shape shape = meta.at("sample_shape").get<Shape>();
    shape.insert(shape.begin(), count);
    std::vector<float> data = decode_floats_le(read_text_file(directory / "data.bin"));
    require(data.size() == shape_product(shape), ErrorKind::FormatError,
            "data.bin length does not match dataset.json");
    ds.samples = Tensor(std::move(shape), std::move(data));
    ds.labels = meta.at("labels").get<std::vector<std::size_t>>();
    ds.class_count = meta.at("class_count").get<std::size_t>();
    const auto prov = parse_provenance(meta.at("provenance").get<std::string>());
    require(prov.has_value(), ErrorKind::FormatError, "dataset.json: unknown provenance");
    ds.provenance = *prov;
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.validate();
    return ds;
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("dataset.json: ") + e.what());
  }
}

}  // namespace retroquant
