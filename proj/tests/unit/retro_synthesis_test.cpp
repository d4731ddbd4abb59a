// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "retroquant/error.hpp"
#include "retroquant/retro_synthesis.hpp"

namespace {

using namespace retroquant;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::UsageError;
}

TEST(StatLoss, IdenticalStatsGiveZero) {
  const ChannelStats s{{0.5f, -1.0f, 2.0f}, {1.0f, 0.2f, 3.0f}};
  EXPECT_EQ(stat_loss(s, s), 0.0);
}

TEST(StatLoss, WorkedExamples) {
  EXPECT_EQ(stat_loss({{1.0f, 0.0f}, {1.0f, 1.0f}}, {{0.0f, 0.0f}, {1.0f, 1.0f}}), 1.0);
  EXPECT_EQ(stat_loss({{0.5f}, {1.5f}}, {{0.0f}, {1.0f}}), 0.5);
}

TEST(StatLoss, MeanOffsetOnly) {
  EXPECT_DOUBLE_EQ(stat_loss({{1.0f, 2.0f}, {1.0f, 1.0f}}, {{0.0f, 0.0f}, {1.0f, 1.0f}}), 5.0);
}

TEST(StatLoss, StdOffsetOnly) {
  EXPECT_DOUBLE_EQ(stat_loss({{0.0f}, {3.0f}}, {{0.0f}, {1.0f}}), 4.0);
}

TEST(StatLoss, MixedArithmetic) {
  EXPECT_DOUBLE_EQ(stat_loss({{1.0f, 0.0f}, {2.0f, 0.5f}}, {{0.0f, 2.0f}, {1.0f, 1.0f}}),
                   1.0 + 4.0 + 1.0 + 0.25);
}

TEST(StatLoss, LengthMismatch) {
  EXPECT_EQ(kind_of([] { stat_loss({{0.0f}, {1.0f}}, {{0.0f, 0.0f}, {1.0f, 1.0f}}); }),
            ErrorKind::LengthMismatch);
}

TEST(BatchNormReference, StdIsSqrtOfRunningVariance) {
  LayerSpec bn = LayerSpec::batch_norm(2);
  bn.running_mean = Tensor({2}, std::vector<float>{0.5f, -1.0f});
  bn.running_var = Tensor({2}, std::vector<float>{4.0f, 0.25f});
  const ChannelStats r = batch_norm_reference(bn);
  EXPECT_EQ(r.mean, (std::vector<float>{0.5f, -1.0f}));
  EXPECT_EQ(r.std, (std::vector<float>{2.0f, 0.5f}));
}

Model linear_softmax(std::size_t in, std::size_t classes) {
  Model m;
  m.name = "toy";
  m.input_shape = {in};
  m.class_count = classes;
  m.layers = {LayerSpec::linear(in, classes), LayerSpec::softmax()};
  std::mt19937_64 rng(3);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (float& v : m.layers[0].weight.data()) v = d(rng);
  return m;
}

TEST(TotalLoss, NoBatchNormGivesZeroBnTerm) {
  const Model m = linear_softmax(4, 2);
  const Tensor x({2, 4}, std::vector<float>{1, -1, 1, -1, -1, 1, -1, 1});
  const TracedOutput out = forward_traced(m, x, true);
  const LossBreakdown l =
      total_loss(out.trace, m, x, out.logits, Tensor({2}, 0.5f), LossWeights{});
  EXPECT_EQ(l.l_bn, 0.0);
  EXPECT_NEAR(l.l_g, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(l.total, l.l_bn + l.l_g + l.l_c);
}

TEST(TotalLoss, TargetEqualToSoftmaxGivesZeroClassTerm) {
  const Model m = linear_softmax(3, 3);
  const Tensor x({1, 3}, std::vector<float>{0.2f, -0.4f, 1.0f});
  const TracedOutput out = forward_traced(m, x, true);
  const Tensor target({3}, std::vector<float>(out.logits.data().begin(), out.logits.data().end()));
  const LossBreakdown l = total_loss(out.trace, m, x, out.logits, target, LossWeights{});
  EXPECT_NEAR(l.l_c, 0.0, 1e-15);
}

TEST(TotalLoss, WeightsScaleTerms) {
  const Model& m = rq_test::desk_model(Arch::CnnBn);
  const Tensor x = rq_test::desk_test().slice(0, 4).samples;
  const TracedOutput out = forward_traced(m, x, true);
  const Tensor target = make_target(10, 2, 1);
  const LossBreakdown a = total_loss(out.trace, m, x, out.logits, target, {1, 1, 1});
  const LossBreakdown b = total_loss(out.trace, m, x, out.logits, target, {2, 0, 3});
  EXPECT_GT(a.l_bn, 0.0);
  EXPECT_DOUBLE_EQ(b.total, 2 * a.l_bn + 3 * a.l_c);
}

TEST(TotalLoss, TraceWithoutBatchNormEntriesIsRejected) {
  const Model& m = rq_test::desk_model(Arch::CnnBn);
  const Tensor x = rq_test::desk_test().slice(0, 2).samples;
  TracedOutput out = forward_traced(m, x, true);
  std::erase_if(out.trace,
                [](const TracePoint& p) { return p.kind == TracePointKind::BatchNormInput; });
  EXPECT_EQ(kind_of([&] {
              total_loss(out.trace, m, x, out.logits, make_target(10, 0, 1), LossWeights{});
            }),
            ErrorKind::TraceMismatch);
  EXPECT_EQ(kind_of([&] {
              total_loss({}, m, x, out.logits, make_target(10, 0, 1), LossWeights{});
            }),
            ErrorKind::TraceMismatch);
}

TEST(MakeTarget, SingleClass) {
  const Tensor t = make_target(1, 0, 5);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_GT(t[0], 0.0f);
  EXPECT_LE(t[0], 1.0f);
}

TEST(MakeTarget, StrictUniqueArgmaxForManySeeds) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t c = seed % 10;
    const Tensor t = make_target(10, c, seed);
    for (std::size_t j = 0; j < 10; ++j) {
      EXPECT_GE(t[j], 0.0f);
      EXPECT_LE(t[j], 1.0f);
      if (j != c) {
        EXPECT_LT(t[j], t[c]);
      }
    }
  }
}

TEST(MakeTarget, SeedsRandomizeOtherEntries) {
  const Tensor a = make_target(10, 3, 1), b = make_target(10, 3, 2);
  EXPECT_EQ(a[3], b[3]);
  EXPECT_NE(a, b);
  EXPECT_EQ(make_target(10, 3, 1), a);
}

TEST(MakeTarget, ClassOutOfRange) {
  EXPECT_EQ(kind_of([] { make_target(3, 3, 0); }), ErrorKind::InvalidArgument);
}

TEST(GenConfig, Validation) {
  const Model m = linear_softmax(4, 2);
  GenConfig c;
  c.learning_rate = 0.0;
  EXPECT_EQ(kind_of([&] { c.validate(m); }), ErrorKind::InvalidArgument);
  c = {};
  c.batch_size = 0;
  EXPECT_EQ(kind_of([&] { c.validate(m); }), ErrorKind::InvalidArgument);
  c = {};
  c.target_class = 2;
  EXPECT_EQ(kind_of([&] { c.validate(m); }), ErrorKind::InvalidArgument);
  c = {};
  c.loss_weights = {0, 0, 0};
  EXPECT_EQ(kind_of([&] { c.validate(m); }), ErrorKind::InvalidArgument);
}

TEST(Generate, ZeroEpochsReturnsInitialGaussianBatch) {
  const Model m = linear_softmax(4, 2);
  GenConfig c;
  c.epochs = 0;
  c.batch_size = 5;
  const GenerationResult r = synthesize_class(m, c);
  EXPECT_EQ(r.batch.shape(), (Shape{5, 4}));
  EXPECT_EQ(r.history.size(), 1u);
  c.epochs = 1;
  const GenerationResult one = synthesize_class(m, c);
  EXPECT_NE(one.batch, r.batch);
  EXPECT_EQ(one.history.front().total, r.history.front().total);
}

// With target [1, u] the squared error to a two-class softmax is minimised at
// p0 = 1 - u / 2.
TEST(Generate, TwoClassLinearToyReachesClassLossOptimum) {
  const Model m = linear_softmax(4, 2);
  GenConfig c;
  c.epochs = 200;
  c.learning_rate = 0.05;
  c.batch_size = 16;
  c.target_class = 0;
  const GenerationResult r = synthesize_class(m, c);
  const Tensor p = forward(m, r.batch);
  double mean = 0.0;
  for (std::size_t row = 0; row < 16; ++row) mean += p[row * 2] / 16.0;
  const double optimum = 1.0 - r.target[1] / 2.0;
  EXPECT_NEAR(mean, optimum, 0.02);
  EXPECT_GT(mean, 0.5);
}

// The class term alone pulls softmax[C] towards the projection of the target
// onto the simplex, so the loss descends even where softmax[C] overshoots.
TEST(Generate, PureClassLossIsMonotoneAtCheckpoints) {
  const Model& m = rq_test::desk_model(Arch::CnnBn);
  GenConfig c = rq_test::fast_gen_config(7);
  c.target_class = 1;
  c.loss_weights = {0.0, 0.0, 1.0};
  const GenerationResult r = synthesize_class(m, c);
  for (std::size_t e = 10; e < r.history.size(); e += 10)
    EXPECT_LE(r.history[e].l_c, r.history[e - 10].l_c + 1e-3) << "epoch " << e;
  const Tensor p = forward(m, r.batch);
  for (std::size_t row = 0; row < c.batch_size; ++row)
    for (std::size_t k = 0; k < m.class_count; ++k) {
      if (k != 1) {
        EXPECT_GT(p[row * m.class_count + 1], p[row * m.class_count + k]);
      }
    }
}

TEST(Generate, DeskCnnReducesBnAndClassLosses) {
  const Model& m = rq_test::desk_model(Arch::CnnBn);
  const GenerationResult r = synthesize_class(m, rq_test::fast_gen_config(3));
  EXPECT_EQ(r.history.size(), 201u);
  EXPECT_LT(r.history.back().l_bn, r.history.front().l_bn);
  EXPECT_LT(r.history.back().l_c, r.history.front().l_c);
}

TEST(Generate, TotalLossDescendsInMostSeededRuns) {
  const Model& m = rq_test::desk_model(Arch::CnnBn);
  int descending = 0;
  constexpr int kRuns = 10;
  for (int s = 0; s < kRuns; ++s) {
    GenConfig c = rq_test::fast_gen_config(1000 + s);
    c.target_class = static_cast<std::size_t>(s);
    const GenerationResult r = synthesize_class(m, c);
    bool ok = true;
    for (std::size_t e = 10; e < r.history.size(); e += 10)
      ok &= r.history[e].total <= r.history[e - 10].total;
    descending += ok;
  }
  EXPECT_GE(descending, 9);
}

TEST(Generate, DeterministicAndLeavesModelUntouched) {
  const Model& m = rq_test::desk_model(Arch::CnnBn);
  const Model before = m;
  GenConfig c = rq_test::fast_gen_config(5);
  c.epochs = 20;
  const Tensor a = generate_class_batch(m, c);
  const Tensor b = generate_class_batch(m, c);
  EXPECT_EQ(a, b);
  EXPECT_EQ(m, before);
  c.seed = 6;
  EXPECT_NE(generate_class_batch(m, c), a);
}

TEST(Generate, NonFiniteLossIsReported) {
  Model m = linear_softmax(4, 2);
  m.layers[0].weight[0] = std::numeric_limits<float>::quiet_NaN();
  GenConfig c;
  c.epochs = 5;
  EXPECT_EQ(kind_of([&] { synthesize_class(m, c); }), ErrorKind::DivergedLoss);
}

TEST(GenerateDataset, CountsAndLabels) {
  const Model m = linear_softmax(4, 10);
  GenConfig c;
  c.epochs = 3;
  c.batch_size = 3;
  const LabeledDataset d = generate_dataset(m, 4, c);
  ASSERT_EQ(d.size(), 40u);
  EXPECT_EQ(d.samples.shape(), (Shape{40, 4}));
  EXPECT_EQ(d.provenance, Provenance::Retro);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(d.labels[i], i / 4);
  EXPECT_EQ(generate_dataset(m, 4, c), d);
  EXPECT_EQ(kind_of([&] { generate_dataset(m, 0, c); }), ErrorKind::InvalidArgument);
}

TEST(GenerateDataset, DeskScaleFinishesInUnderAMinute) {
  const Model& m = rq_test::desk_model(Arch::CnnBn);
  const auto start = std::chrono::steady_clock::now();
  GenConfig c;
  const LabeledDataset d = generate_dataset(m, 32, c);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(d.size(), 320u);
  EXPECT_LT(seconds, 60.0);
}

}  // namespace
