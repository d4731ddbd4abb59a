// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "retroquant/error.hpp"
#include "retroquant/nonuniform.hpp"
#include "retroquant/quant.hpp"

namespace {

using namespace retroquant;
using Steps = std::array<std::size_t, 3>;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::UsageError;
}

const std::vector<float> kOutlierList{1, 2, 3, 4, 5, 6, 7, 8, 9, 100};

TEST(Quartiles, OutlierList) {
  const Quartiles q = quartiles(kOutlierList);
  EXPECT_EQ(q.q1, 3.0);
  EXPECT_EQ(q.q2, 5.5);
  EXPECT_EQ(q.q3, 8.0);
  EXPECT_EQ(q.iqr(), 5.0);
}

TEST(Quartiles, EvenList) {
  const std::vector<float> v{1, 2, 3, 4, 5, 6, 7, 8};
  const Quartiles q = quartiles(v);
  EXPECT_EQ(q.q1, 2.5);
  EXPECT_EQ(q.q3, 6.5);
}

TEST(Quartiles, ConstantAndSingleValue) {
  const std::vector<float> c(7, 1.25f);
  const Quartiles q = quartiles(c);
  EXPECT_EQ(q.q1, 1.25);
  EXPECT_EQ(q.q2, 1.25);
  EXPECT_EQ(q.q3, 1.25);
  const std::vector<float> one{-3.0f};
  EXPECT_EQ(quartiles(one).q1, -3.0);
  EXPECT_EQ(quartiles(one).q3, -3.0);
}

TEST(Quartiles, EmptyInput) {
  EXPECT_EQ(kind_of([] { quartiles(std::span<const float>{}); }), ErrorKind::EmptyInput);
}

// Every list of length 1..7 over a 3-letter alphabet, plus random lists up to 12.
TEST(Quartiles, MatchBruteForceOracle) {
  const std::array<float, 3> alphabet{-1.5f, 0.0f, 2.25f};
  for (std::size_t len = 1; len <= 7; ++len) {
    std::size_t combos = 1;
    for (std::size_t i = 0; i < len; ++i) combos *= alphabet.size();
    for (std::size_t code = 0; code < combos; ++code) {
      std::vector<float> v(len);
      std::vector<double> d(len);
      std::size_t c = code;
      for (std::size_t i = 0; i < len; ++i, c /= 3) d[i] = v[i] = alphabet[c % 3];
      const Quartiles q = quartiles(v);
      const rq_test::QuartileOracle o = rq_test::brute_quartiles(d);
      ASSERT_EQ(q.q1, o.q1);
      ASSERT_EQ(q.q2, o.q2);
      ASSERT_EQ(q.q3, o.q3);
    }
  }
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> val(-20, 20), len(1, 12);
  for (int t = 0; t < 5000; ++t) {
    std::vector<float> v(static_cast<std::size_t>(len(rng)));
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = v[i] = val(rng) * 0.5f;
    const Quartiles q = quartiles(v);
    const rq_test::QuartileOracle o = rq_test::brute_quartiles(d);
    ASSERT_EQ(q.q1, o.q1);
    ASSERT_EQ(q.q3, o.q3);
  }
}

TEST(IqrClusters, OutlierList) {
  const ClusterPlan p = iqr_clusters(kOutlierList);
  EXPECT_EQ(p.lower_fence, -4.5f);
  EXPECT_EQ(p.upper_fence, 15.5f);
  EXPECT_TRUE(p.clusters[0].empty());
  EXPECT_EQ(p.clusters[1].count, 9u);
  EXPECT_EQ(p.clusters[1].lo, 1.0f);
  EXPECT_EQ(p.clusters[1].hi, 9.0f);
  EXPECT_EQ(p.clusters[2].count, 1u);
  EXPECT_EQ(p.clusters[2].range(), 0.0);
  EXPECT_EQ(p.nonempty_count(), 2u);
}

TEST(IqrClusters, ConstantTensor) {
  const std::vector<float> c(20, 0.3f);
  const ClusterPlan p = iqr_clusters(c);
  EXPECT_TRUE(p.clusters[0].empty());
  EXPECT_EQ(p.clusters[1].count, 20u);
  EXPECT_TRUE(p.clusters[2].empty());
}

TEST(IqrClusters, GaussianHasFewOutliers) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<float> d;
  std::vector<float> v(10000);
  for (float& x : v) x = d(rng);
  const ClusterPlan p = iqr_clusters(v);
  EXPECT_LT(p.clusters[0].count + p.clusters[2].count, 300u);
}

TEST(IqrClusters, PartitionIsExhaustiveAndDisjoint) {
  std::mt19937_64 rng(9);
  std::student_t_distribution<float> d(2.0f);
  for (int t = 0; t < 200; ++t) {
    std::vector<float> v(50 + t);
    for (float& x : v) x = d(rng);
    const ClusterPlan p = iqr_clusters(v);
    std::array<std::size_t, 3> seen{};
    for (float x : v) {
      const std::size_t c = p.cluster_of(x);
      ++seen[c];
      EXPECT_GE(x, p.clusters[c].lo);
      EXPECT_LE(x, p.clusters[c].hi);
    }
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(seen[c], p.clusters[c].count);
  }
}

TEST(ApportionSteps, WorkedExamples) {
  EXPECT_EQ(apportion_steps({0, 72, 0}, {0, 9, 1}, 16), (Steps{0, 15, 1}));
  EXPECT_EQ(apportion_steps({3, 3, 0}, {4, 4, 0}, 16), (Steps{8, 8, 0}));
  EXPECT_EQ(apportion_steps({1, 1, 2}, {5, 5, 5}, 8), (Steps{2, 2, 4}));
}

TEST(ApportionSteps, TiesGoToLowerIndex) {
  EXPECT_EQ(apportion_steps({1, 1, 1}, {2, 2, 2}, 4), (Steps{2, 1, 1}));
}

TEST(ApportionSteps, Errors) {
  EXPECT_EQ(kind_of([] { apportion_steps({1, 1, 1}, {1, 1, 1}, 2); }),
            ErrorKind::BudgetTooSmall);
  EXPECT_EQ(kind_of([] { apportion_steps({0, 0, 0}, {0, 0, 0}, 8); }),
            ErrorKind::EmptyInput);
}

TEST(ApportionSteps, MatchesBruteForceOracle) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> count(0, 5), product(0, 9), budget(3, 40);
  for (int t = 0; t < 5000; ++t) {
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> products{};
    for (std::size_t i = 0; i < 3; ++i) {
      counts[i] = static_cast<std::size_t>(count(rng));
      products[i] = counts[i] > 1 ? product(rng) * 0.25 : 0.0;
    }
    if (counts[0] + counts[1] + counts[2] == 0) continue;
    const auto b = static_cast<std::size_t>(budget(rng));
    ASSERT_EQ(apportion_steps(products, counts, b),
              rq_test::brute_apportion(products, counts, b))
        << products[0] << " " << products[1] << " " << products[2] << " budget " << b;
  }
}

TEST(AllocateSteps, OutlierListAtFourBits) {
  const ClusterPlan p = allocate_steps(iqr_clusters(kOutlierList), 4);
  EXPECT_EQ(p.clusters[0].steps, 0u);
  EXPECT_EQ(p.clusters[1].steps, 15u);
  EXPECT_EQ(p.clusters[2].steps, 1u);
  EXPECT_EQ(p.bits, 4);
}

TEST(AllocateSteps, BudgetExactnessAndMinOneFuzz) {
  std::mt19937_64 rng(1000);
  for (int t = 0; t < 1000; ++t) {
    std::student_t_distribution<float> d(1.0f + (t % 5));
    std::vector<float> v(16 + t % 300);
    for (float& x : v) x = d(rng);
    const ClusterPlan base = iqr_clusters(v);
    for (int bits : {4, 6, 8}) {
      const ClusterPlan p = allocate_steps(base, bits);
      ASSERT_EQ(p.total_steps(), std::size_t{1} << bits);
      for (const Cluster& c : p.clusters) {
        if (c.empty()) ASSERT_EQ(c.steps, 0u);
        else ASSERT_GE(c.steps, 1u);
      }
    }
  }
}

TEST(NonuniformQuantize, ConstantWeightsAreExact) {
  const Tensor w({4, 3}, 0.7f);
  const NonUniformResult r = nonuniform_quantize(w, 8);
  EXPECT_EQ(r.weights, w);
  EXPECT_EQ(r.plan.total_steps(), 256u);
}

TEST(NonuniformQuantize, ZeroIsExactInItsCluster) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> d;
  Tensor w({200});
  for (float& x : w.data()) x = d(rng);
  w[0] = 0.0f;
  const NonUniformResult r = nonuniform_quantize(w, 6);
  EXPECT_EQ(r.weights[0], 0.0f);
  EXPECT_EQ(r.codebook.apply(0.0f), 0.0f);
}

TEST(NonuniformQuantize, ValuesStayInTheirClusterInterval) {
  std::mt19937_64 rng(6);
  std::student_t_distribution<float> d(1.5f);
  Tensor w({500});
  for (float& x : w.data()) x = d(rng);
  const NonUniformResult r = nonuniform_quantize(w, 4);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::size_t c = r.plan.cluster_of(w[i]);
    // A zero-aligned grid may overhang its cluster by half a step.
    const float slack = r.codebook.clusters[c].scale / 2 + 1e-5f * (1.0f + std::abs(w[i]));
    EXPECT_GE(r.weights[i], r.plan.clusters[c].lo - slack);
    EXPECT_LE(r.weights[i], r.plan.clusters[c].hi + slack);
  }
}

TEST(NonuniformQuantize, CodesStayWithinClusterBudget) {
  const Tensor w = rq_test::heavy_tailed_mixture(1);
  const NonUniformResult r = nonuniform_quantize(w, 8);
  for (std::size_t c = 0; c < 3; ++c) {
    const ClusterQuantizer& q = r.codebook.clusters[c];
    EXPECT_EQ(q.steps, r.plan.clusters[c].steps);
    for (float x : w.data())
      if (r.plan.cluster_of(x) == c) {
        const std::int32_t code = q.encode(x);
        ASSERT_GE(code, 0);
        ASSERT_LT(static_cast<std::size_t>(code), q.steps);
      }
  }
}

TEST(NonuniformQuantize, OutlierFreeInputReducesToUniformOverCore) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor w({4000});
  for (float& x : w.data()) x = u(rng);
  const NonUniformResult r = nonuniform_quantize(w, 8);
  ASSERT_EQ(r.plan.nonempty_count(), 1u);
  EXPECT_EQ(r.plan.clusters[1].steps, 256u);
  const double nu = mean_squared_error(w, r.weights);
  const double pt = mean_squared_error(w, fake_quant(w, per_tensor_params(w, 8)));
  EXPECT_NEAR(nu, pt, 0.05 * pt);
}

TEST(NonuniformQuantize, HeavyTailedMixtureBeatsUniform) {
  const Tensor w = rq_test::heavy_tailed_mixture(42);
  const double nu = mean_squared_error(w, nonuniform_quantize(w, 8).weights);
  const double pt = mean_squared_error(w, fake_quant(w, per_tensor_params(w, 8)));
  EXPECT_LT(nu, pt);
}

TEST(NonuniformQuantize, EmptyTensor) {
  EXPECT_EQ(kind_of([] { nonuniform_quantize(Tensor({0}), 8); }), ErrorKind::EmptyInput);
}

}  // namespace
