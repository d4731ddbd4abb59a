// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>
#include <random>

#include "retroquant/dataset.hpp"
#include "retroquant/error.hpp"
#include "retroquant/file_util.hpp"
#include "retroquant/harness.hpp"
#include "retroquant/model_io.hpp"

namespace {

namespace fs = std::filesystem;
using namespace retroquant;
using json = nlohmann::ordered_json;

class ModelIo : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("rq_model_io_" + std::string(::testing::UnitTest::GetInstance()
                                             ->current_test_info()
                                             ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  void expect_format_error() {
    try {
      load_model(dir_);
      FAIL() << "load succeeded";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::FormatError) << e.what();
    }
  }

  json manifest() { return json::parse(read_text_file(dir_ / "model.json")); }
  void write_manifest(const json& j) { write_file_atomic(dir_ / "model.json", j.dump(2)); }

  fs::path dir_;
};

Model sample_model() {
  Model m = build_arch(Arch::CnnBn, kDefaultInputShape, kDefaultClassCount, 3);
  std::mt19937_64 rng(9);
  std::normal_distribution<float> d(0.0f, 0.3f);
  for (LayerSpec& l : m.layers)
    if (l.kind == LayerKind::BatchNorm) {
      for (float& v : l.running_mean.data()) v = d(rng);
      for (float& v : l.running_var.data()) v = 1.0f + std::abs(d(rng));
    }
  return m;
}

TEST_F(ModelIo, RoundTripIsBitExact) {
  const Model m = sample_model();
  save_model(m, dir_);
  const Model back = load_model(dir_);
  EXPECT_EQ(back, m);
  Tensor x({2, 1, 16, 16}, 0.25f);
  EXPECT_EQ(forward(back, x), forward(m, x));
}

TEST_F(ModelIo, RoundTripKeepsSoftmaxHead) {
  Model m;
  m.name = "probs";
  m.input_shape = {3};
  m.class_count = 2;
  m.layers = {LayerSpec::linear(3, 2), LayerSpec::softmax()};
  m.layers[0].weight = Tensor({2, 3}, std::vector<float>{0.1f, -0.2f, 0.3f, 1e-8f, 7.5f, -3.0f});
  save_model(m, dir_);
  const Model back = load_model(dir_);
  EXPECT_EQ(back, m);
  EXPECT_TRUE(back.outputs_probabilities());
  EXPECT_EQ(manifest()["output"], "probabilities");
}

TEST_F(ModelIo, TruncatedWeightsAreRejected) {
  save_model(sample_model(), dir_);
  std::string blob = read_text_file(dir_ / "weights.bin");
  blob.resize(blob.size() - 4);
  write_file_atomic(dir_ / "weights.bin", blob);
  expect_format_error();
}

TEST_F(ModelIo, ShortBlobWithMatchingByteCountIsRejected) {
  save_model(sample_model(), dir_);
  std::string blob = read_text_file(dir_ / "weights.bin");
  blob.resize(blob.size() - 8);
  write_file_atomic(dir_ / "weights.bin", blob);
  json j = manifest();
  j["weights_bytes"] = blob.size();
  write_manifest(j);
  expect_format_error();
}

TEST_F(ModelIo, UnknownLayerKindIsRejected) {
  save_model(sample_model(), dir_);
  json j = manifest();
  j["layers"][0]["kind"] = "conv3d";
  write_manifest(j);
  expect_format_error();
}

TEST_F(ModelIo, NewerVersionIsRejected) {
  save_model(sample_model(), dir_);
  json j = manifest();
  j["version"] = kModelVersion + 1;
  write_manifest(j);
  expect_format_error();
}

TEST_F(ModelIo, WrongMagicIsRejected) {
  save_model(sample_model(), dir_);
  json j = manifest();
  j["format"] = "something-else";
  write_manifest(j);
  expect_format_error();
}

TEST_F(ModelIo, InconsistentShapesAreRejected) {
  save_model(sample_model(), dir_);
  json j = manifest();
  j["class_count"] = 11;
  write_manifest(j);
  try {
    load_model(dir_);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST_F(ModelIo, MissingDirectoryIsAnIoError) {
  try {
    load_model(dir_ / "nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoError);
  }
}

TEST_F(ModelIo, DatasetRoundTrip) {
  const LabeledDataset d = synth_dataset(5, 3, 4, kDefaultInputShape);
  save_dataset(d, dir_);
  EXPECT_EQ(load_dataset(dir_), d);
}

}  // namespace
