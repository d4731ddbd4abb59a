// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.hpp"

#include <map>
#include <mutex>
#include <random>

namespace rq_test {

using namespace retroquant;

const LabeledDataset& desk_train() {
  static const LabeledDataset d =
      synth_dataset(kTrainSeed, kDefaultClassCount, 100, kDefaultInputShape);
  return d;
}

const LabeledDataset& desk_test() {
  static const LabeledDataset d =
      synth_dataset(kTestSeed, kDefaultClassCount, 50, kDefaultInputShape);
  return d;
}

const LabeledDataset& desk_holdout() {
  static const LabeledDataset d =
      synth_dataset(kHoldoutSeed, kDefaultClassCount, 500, kDefaultInputShape);
  return d;
}

GenConfig default_gen_config(std::uint64_t seed, std::size_t batch_size) {
  GenConfig cfg;
  cfg.batch_size = batch_size;
  cfg.seed = seed;
  return cfg;
}

TrainConfig desk_train_config(Arch arch, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  switch (arch) {
    case Arch::CnnBn: cfg.learning_rate = 0.05; break;
    case Arch::CnnPlain: cfg.learning_rate = 0.1; break;
    default: cfg.learning_rate = 0.02; break;
  }
  return cfg;
}

const Model& desk_model(Arch arch) {
  static std::mutex mu;
  static std::map<Arch, Model> cache;
  const std::lock_guard lock(mu);
  auto it = cache.find(arch);
  if (it == cache.end())
    it = cache.emplace(arch, train_reference(arch, desk_train(), desk_train_config(arch)).model)
             .first;
  return it->second;
}

GenConfig fast_gen_config(std::uint64_t seed) {
  GenConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = kFastPerClass;
  cfg.seed = seed;
  return cfg;
}

Tensor heavy_tailed_mixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> core(0.0f, 0.1f), tail(5.0f, 0.1f);
  Tensor t({10000});
  for (std::size_t i = 0; i < 9900; ++i) t[i] = core(rng);
  for (std::size_t i = 9900; i < 10000; ++i) t[i] = tail(rng);
  return t;
}

}  // namespace rq_test
