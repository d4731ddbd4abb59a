// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/reports.hpp"

#include <json.hpp>

#include "retroquant/error.hpp"
#include "retroquant/file_util.hpp"

namespace retroquant {

using json = nlohmann::ordered_json;

std::string eval_json(std::span<const EvalReport> reports, std::uint64_t seed) {
  json j;
  j["seed"] = seed;
  json rows = json::array();
  for (const EvalReport& r : reports)
    rows.push_back({{"model", r.model_id},
                    {"scheme", r.scheme},
                    {"w_bits", r.weight_bits},
                    {"a_bits", r.activation_bits},
                    {"correct", r.correct},
                    {"samples", r.sample_count},
                    {"accuracy", json_double(r.accuracy)}});
  j["reports"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string eval_csv(std::span<const EvalReport> reports) {
  std::string out = "model,scheme,w_bits,a_bits,correct,samples,accuracy\n";
  for (const EvalReport& r : reports)
    out += r.model_id + "," + r.scheme + "," + std::to_string(r.weight_bits) + "," +
           std::to_string(r.activation_bits) + "," + std::to_string(r.correct) + "," +
           std::to_string(r.sample_count) + "," + format_g9(r.accuracy) + "\n";
  return out;
}

namespace {

json doubles_json(std::span<const double> v) {
  json a = json::array();
  for (double d : v) a.push_back(json_double(d));
  return a;
}

}  // namespace

std::string sensitivity_json(const SensitivityReport& report, std::uint64_t seed) {
  json j;
  j["seed"] = seed;
  j["scheme"] = report.scheme;
  j["bits"] = report.bits;
  j["layers"] = report.layers;
  j["real"] = doubles_json(report.real);
  j["retro"] = doubles_json(report.retro);
  j["random"] = doubles_json(report.random);
  j["d_retro_real"] = json_double(report.d_retro_real);
  j["d_random_real"] = json_double(report.d_random_real);
  return j.dump(2) + "\n";
}

std::string sensitivity_csv(const SensitivityReport& report) {
  std::string out = "layer,real,retro,random\n";
  for (std::size_t k = 0; k < report.layers.size(); ++k)
    out += std::to_string(report.layers[k]) + "," + format_g9(report.real[k]) + "," +
           format_g9(report.retro[k]) + "," + format_g9(report.random[k]) + "\n";
  return out;
}

std::string calibration_json(const ActivationCalibration& calibration, std::uint64_t seed) {
  json j;
  j["seed"] = seed;
  j["bits"] = calibration.bits;
  json points = json::array();
  for (std::size_t k = 0; k < calibration.ranges.size(); ++k) {
    const ActivationRange& r = calibration.ranges[k];
    json p = {{"index", r.layer_index}, {"min", json_float(r.min)}, {"max", json_float(r.max)}};
    if (k < calibration.params.size()) {
      p["scale"] = json_float(calibration.params[k].scale[0]);
      p["zero_point"] = calibration.params[k].zero_point[0];
    }
    points.push_back(std::move(p));
  }
  j["points"] = std::move(points);
  return j.dump(2) + "\n";
}

std::string calibration_csv(const ActivationCalibration& calibration) {
  std::string out = "layer,min,max,scale,zero_point\n";
  for (std::size_t k = 0; k < calibration.ranges.size(); ++k) {
    const ActivationRange& r = calibration.ranges[k];
    out += std::to_string(r.layer_index) + "," + format_g9(r.min) + "," + format_g9(r.max) + ",";
    if (k < calibration.params.size())
      out += format_g9(calibration.params[k].scale[0]) + "," +
             std::to_string(calibration.params[k].zero_point[0]);
    else
      out += ",";
    out += "\n";
  }
  return out;
}

ActivationCalibration calibration_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    std::vector<ActivationRange> ranges;
    for (const json& p : j.at("points"))
      ranges.push_back({p.at("index").get<std::size_t>(),
                        static_cast<float>(p.at("min").get<double>()),
                        static_cast<float>(p.at("max").get<double>())});
    return calibration_from_ranges(std::move(ranges), j.at("bits").get<int>());
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("calibration file: ") + e.what());
  }
}

std::string loss_history_csv(std::span<const LossBreakdown> history) {
  std::string out = "epoch,l_bn,l_g,l_c,total\n";
  for (std::size_t e = 0; e < history.size(); ++e)
    out += std::to_string(e) + "," + format_g9(history[e].l_bn) + "," +
           format_g9(history[e].l_g) + "," + format_g9(history[e].l_c) + "," +
           format_g9(history[e].total) + "\n";
  return out;
}

std::string training_csv(std::span<const double> epoch_losses) {
  std::string out = "epoch,loss\n";
  for (std::size_t e = 0; e < epoch_losses.size(); ++e)
    out += std::to_string(e) + "," + format_g9(epoch_losses[e]) + "\n";
  return out;
}

}  // namespace retroquant
