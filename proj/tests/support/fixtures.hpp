// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "retroquant/harness.hpp"
#include "retroquant/retro_synthesis.hpp"

namespace rq_test {

using retroquant::Arch;
using retroquant::LabeledDataset;

inline constexpr std::uint64_t kTrainSeed = 101;
inline constexpr std::uint64_t kTestSeed = 202;
inline constexpr std::uint64_t kHoldoutSeed = 303;

/// Desk-scale synthetic splits sharing the default templates.
const LabeledDataset& desk_train();  // 100 per class
const LabeledDataset& desk_test();   // 50 per class
/// Large held-out split for accuracy comparisons at sub-percent resolution.
const LabeledDataset& desk_holdout();  // 500 per class

retroquant::TrainConfig desk_train_config(Arch arch, std::uint64_t seed = 42);

/// Reference model trained on desk_train, cached per arch.
const retroquant::Model& desk_model(Arch arch);

/// Light synthesis settings that keep the suites within their time budget.
retroquant::GenConfig fast_gen_config(std::uint64_t seed);
inline constexpr std::size_t kFastPerClass = 8;

/// Default synthesis settings with the given seed and batch size.
retroquant::GenConfig default_gen_config(std::uint64_t seed, std::size_t batch_size);

/// 9900 draws from N(0, 0.1) followed by 100 draws from N(5, 0.1).
retroquant::Tensor heavy_tailed_mixture(std::uint64_t seed);

}  // namespace rq_test
