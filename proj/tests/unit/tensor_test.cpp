// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "retroquant/error.hpp"
#include "retroquant/file_util.hpp"
#include "retroquant/parallel.hpp"
#include "retroquant/tensor.hpp"

namespace {

using namespace retroquant;

TEST(Tensor, ShapeAndStorage) {
  const Tensor t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_FLOAT_EQ(t[5], 1.5f);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>(3)), Error);
}

TEST(Tensor, ReshapeAndSlice) {
  Tensor t({3, 2}, std::vector<float>{0, 1, 2, 3, 4, 5});
  const Tensor s = t.slice_rows(1, 3);
  EXPECT_EQ(s.shape(), (Shape{2, 2}));
  EXPECT_FLOAT_EQ(s[0], 2.0f);
  EXPECT_EQ(t.reshaped({6}).shape(), Shape{6});
  EXPECT_THROW(t.reshaped({4}), Error);
}

TEST(Tensor, ConcatRows) {
  const std::vector<Tensor> parts{Tensor({1, 2}, 1.0f), Tensor({2, 2}, 2.0f)};
  const Tensor c = concat_rows(parts);
  EXPECT_EQ(c.shape(), (Shape{3, 2}));
  EXPECT_FLOAT_EQ(c[0], 1.0f);
  EXPECT_FLOAT_EQ(c[5], 2.0f);
}

TEST(ChannelStats, ConstantTensor) {
  const ChannelStats s = channel_stats(Tensor({2, 3, 2}, 2.0f), 1);
  ASSERT_EQ(s.channels(), 3u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_FLOAT_EQ(s.mean[c], 2.0f);
    EXPECT_FLOAT_EQ(s.std[c], 0.0f);
  }
}

TEST(ChannelStats, TwoPointPopulationStd) {
  const ChannelStats s = channel_stats(Tensor({2, 1}, std::vector<float>{0.0f, 2.0f}), 1);
  EXPECT_FLOAT_EQ(s.mean[0], 1.0f);
  EXPECT_FLOAT_EQ(s.std[0], 1.0f);
}

TEST(ChannelStats, MatchesTwoPassOracle) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> d(0.5f, 2.0f);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t({3, 4, 5, 2});
    for (float& v : t.data()) v = d(rng);
    const ChannelStats s = channel_stats(t, 1);
    std::vector<double> mean, sd;
    rq_test::two_pass_stats(t, mean, sd);
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(s.mean[c], mean[c], 1e-6 * std::max(1.0, std::abs(mean[c])));
      EXPECT_NEAR(s.std[c], sd[c], 1e-6 * std::max(1.0, sd[c]));
    }
  }
}

TEST(ChannelStats, InvalidAxis) {
  try {
    channel_stats(Tensor({2, 2}), 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidAxis);
  }
  EXPECT_THROW(channel_stats(Tensor({4}), 0), Error);
}

TEST(Softmax, RowsSumToOneWithinOpenUnitInterval) {
  std::mt19937_64 rng(9);
  std::normal_distribution<float> d(0.0f, 5.0f);
  Tensor logits({50, 7});
  for (float& v : logits.data()) v = d(rng);
  const Tensor p = softmax_rows(logits);
  for (std::size_t r = 0; r < 50; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GT(p[r * 7 + j], 0.0f);
      EXPECT_LT(p[r * 7 + j], 1.0f);
      sum += p[r * 7 + j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Softmax, StableForLargeLogits) {
  const Tensor p = softmax_rows(Tensor({1, 2}, std::vector<float>{1000.0f, 1000.0f}));
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_TRUE(p.all_finite());
}

TEST(Argmax, FirstMaximumWins) {
  const auto a = argmax_rows(Tensor({2, 3}, std::vector<float>{1, 3, 3, 5, 0, 1}));
  EXPECT_EQ(a, (std::vector<std::size_t>{1, 0}));
}

TEST(FileUtil, FloatRoundTrip) {
  const std::vector<float> v{0.0f, -1.5f, 3.14159f, 1e-30f, -0.0f};
  const std::string bytes = encode_floats_le(v);
  EXPECT_EQ(bytes.size(), 20u);
  EXPECT_EQ(static_cast<unsigned char>(encode_floats_le(std::vector<float>{1.0f})[3]), 0x3fu);
  EXPECT_EQ(decode_floats_le(bytes), v);
  EXPECT_THROW(decode_floats_le(bytes.substr(0, 7)), Error);
}

TEST(FileUtil, JsonFloatKeepsNineDigits) {
  EXPECT_EQ(static_cast<float>(json_float(0.1f)), 0.1f);
  EXPECT_EQ(format_g9(2.0 / 3.0), "0.666666667");
}

TEST(Parallel, EveryIndexRunsOnce) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(Parallel, RethrowsTaskError) {
  EXPECT_THROW(parallel_for(10,
                            [](std::size_t i) {
                              if (i == 7) fail(ErrorKind::InvalidArgument, "boom");
                            }),
               Error);
}

}  // namespace
