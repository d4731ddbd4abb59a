// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "retroquant/harness.hpp"
#include "retroquant/quant.hpp"
#include "retroquant/retro_synthesis.hpp"

namespace retroquant {

/// Evaluation rows as JSON ({"seed", "reports": [...]}) and CSV with header
/// `model,scheme,w_bits,a_bits,correct,samples,accuracy`.
std::string eval_json(std::span<const EvalReport> reports, std::uint64_t seed);
std::string eval_csv(std::span<const EvalReport> reports);

/// Per-layer profiles and distances; CSV header `layer,real,retro,random`.
std::string sensitivity_json(const SensitivityReport& report, std::uint64_t seed);
std::string sensitivity_csv(const SensitivityReport& report);

/// Activation ranges; CSV header `layer,min,max,scale,zero_point`.
std::string calibration_json(const ActivationCalibration& calibration, std::uint64_t seed);
std::string calibration_csv(const ActivationCalibration& calibration);
ActivationCalibration calibration_from_json(const std::string& text);

/// Per-epoch loss trace of one synthesis run; CSV header `epoch,l_bn,l_g,l_c,total`.
std::string loss_history_csv(std::span<const LossBreakdown> history);

/// Training loss per epoch; CSV header `epoch,loss`.
std::string training_csv(std::span<const double> epoch_losses);

}  // namespace retroquant
