// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/nonuniform.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "retroquant/error.hpp"
#include "retroquant/quant.hpp"

namespace retroquant {

namespace {

double median_sorted(const float* begin, std::size_t n) {
  if (n % 2) return begin[n / 2];
  return (static_cast<double>(begin[n / 2 - 1]) + begin[n / 2]) / 2.0;
}

}  // namespace

Quartiles quartiles(std::span<const float> values) {
  require(!values.empty(), ErrorKind::EmptyInput, "quartiles of an empty list");
  std::vector<float> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  Quartiles q;
  q.q2 = median_sorted(s.data(), s.size());
  const std::size_t half = s.size() / 2;
  if (half == 0) {
    q.q1 = q.q3 = q.q2;
    return q;
  }
  q.q1 = median_sorted(s.data(), half);
  q.q3 = median_sorted(s.data() + (s.size() - half), half);
  return q;
}

std::size_t ClusterPlan::nonempty_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(clusters.begin(), clusters.end(), [](const Cluster& c) { return !c.empty(); }));
}

ClusterPlan iqr_clusters(std::span<const float> values) {
  ClusterPlan plan;
  plan.quartiles = quartiles(values);
  const double iqr = plan.quartiles.iqr();
  plan.lower_fence = static_cast<float>(plan.quartiles.q1 - 1.5 * iqr);
  plan.upper_fence = static_cast<float>(plan.quartiles.q3 + 1.5 * iqr);
  for (float v : values) {
    Cluster& c = plan.clusters[plan.cluster_of(v)];
    if (c.count == 0) {
      c.lo = c.hi = v;
    } else {
      c.lo = std::min(c.lo, v);
      c.hi = std::max(c.hi, v);
    }
    ++c.count;
  }
  return plan;
}

std::array<std::size_t, 3> apportion_steps(const std::array<double, 3>& products,
                                           const std::array<std::size_t, 3>& counts,
                                           std::size_t budget) {
  std::array<bool, 3> nonempty{};
  std::size_t n_nonempty = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    nonempty[i] = counts[i] > 0;
    n_nonempty += nonempty[i];
  }
  require(n_nonempty > 0, ErrorKind::EmptyInput, "no nonempty cluster");
  require(budget >= n_nonempty, ErrorKind::BudgetTooSmall,
          "budget of " + std::to_string(budget) + " codes cannot cover " +
              std::to_string(n_nonempty) + " nonempty clusters");

  std::array<double, 3> weight{};
  double total = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    if (nonempty[i]) total += products[i];
  for (std::size_t i = 0; i < 3; ++i) {
    if (!nonempty[i]) continue;
    weight[i] = total > 0.0 ? products[i] : static_cast<double>(counts[i]);
  }
  if (!(total > 0.0)) total = std::accumulate(weight.begin(), weight.end(), 0.0);

  std::array<std::size_t, 3> steps{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!nonempty[i]) continue;
    const double ideal = static_cast<double>(budget) * weight[i] / total;
    steps[i] = static_cast<std::size_t>(std::floor(ideal));
    remainder[i] = ideal - static_cast<double>(steps[i]);
    assigned += steps[i];
  }
  // Remainders within rounding noise of each other count as ties.
  constexpr double kTieTolerance = 1e-9;
  std::array<bool, 3> rounded_up{};
  while (assigned < budget) {
    std::size_t best = 3;
    for (std::size_t i = 0; i < 3; ++i) {
      if (!nonempty[i] || rounded_up[i]) continue;
      if (best == 3 || remainder[i] > remainder[best] + kTieTolerance) best = i;
    }
    if (best == 3) {
      rounded_up = {};
      continue;
    }
    rounded_up[best] = true;
    ++steps[best];
    ++assigned;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (!nonempty[i] || steps[i] > 0) continue;
    std::size_t donor = 0;
    for (std::size_t j = 1; j < 3; ++j)
      if (steps[j] > steps[donor]) donor = j;
    --steps[donor];
    steps[i] = 1;
  }
  return steps;
}

ClusterPlan allocate_steps(ClusterPlan plan, int bits) {
  require(bits >= 1 && bits <= 16, ErrorKind::InvalidArgument,
          "bits must be in [1, 16], got " + std::to_string(bits));
  std::array<double, 3> products{};
  std::array<std::size_t, 3> counts{};
  for (std::size_t i = 0; i < 3; ++i) {
    products[i] = plan.clusters[i].range() * static_cast<double>(plan.clusters[i].count);
    counts[i] = plan.clusters[i].count;
  }
  const auto steps = apportion_steps(products, counts, std::size_t{1} << bits);
  for (std::size_t i = 0; i < 3; ++i) plan.clusters[i].steps = steps[i];
  plan.bits = bits;
  return plan;
}

std::int32_t ClusterQuantizer::encode(float value) const noexcept {
  if (steps == 0) return 0;
  const auto qmax = static_cast<std::int32_t>(steps - 1);
  if (zero_aligned) return quantize_value(value, scale, zero_point, qmax);
  if (!(scale > 0.0f)) return 0;
  const double r = std::round((static_cast<double>(value) - anchor) / scale);
  return static_cast<std::int32_t>(std::clamp(r, 0.0, static_cast<double>(qmax)));
}

float ClusterQuantizer::decode(std::int32_t code) const noexcept {
  if (zero_aligned) return dequantize_value(code, scale, zero_point);
  return static_cast<float>(static_cast<double>(anchor) +
                            static_cast<double>(code) * static_cast<double>(scale));
}

ClusterQuantizer make_cluster_quantizer(const Cluster& cluster, bool zero_aligned) {
  ClusterQuantizer q;
  q.lo = cluster.lo;
  q.hi = cluster.hi;
  q.steps = cluster.steps;
  q.zero_aligned = zero_aligned;
  if (cluster.empty() || cluster.steps == 0) {
    q.zero_aligned = false;
    return q;
  }
  if (zero_aligned) {
    const double lo = std::min(0.0f, cluster.lo), hi = std::max(0.0f, cluster.hi);
    const double levels = static_cast<double>(cluster.steps - 1);
    if (cluster.steps == 1 || hi == lo) {
      // A single code, or a range that collapsed onto zero: only 0 is representable.
      q.scale = 1.0f;
      q.zero_point = 0;
    } else {
      q.scale = static_cast<float>((hi - lo) / levels);
      q.zero_point = static_cast<std::int32_t>(std::clamp(std::round(-lo * levels / (hi - lo)),
                                                          0.0, levels));
    }
    return q;
  }
  if (cluster.steps == 1 || cluster.hi == cluster.lo) {
    q.anchor = static_cast<float>((static_cast<double>(cluster.lo) + cluster.hi) / 2.0);
    q.scale = 0.0f;
  } else {
    q.anchor = cluster.lo;
    q.scale = static_cast<float>((static_cast<double>(cluster.hi) - cluster.lo) /
                                 static_cast<double>(cluster.steps - 1));
  }
  return q;
}

NonUniformCodebook make_codebook(const ClusterPlan& plan) {
  NonUniformCodebook cb;
  cb.quartiles = plan.quartiles;
  cb.lower_fence = plan.lower_fence;
  cb.upper_fence = plan.upper_fence;
  cb.bits = plan.bits;
  const std::size_t zero_cluster = plan.cluster_of(0.0f);
  for (std::size_t i = 0; i < 3; ++i)
    cb.clusters[i] = make_cluster_quantizer(plan.clusters[i], i == zero_cluster);
  return cb;
}

NonUniformResult nonuniform_quantize(const Tensor& weights, int bits) {
  NonUniformResult r;
  r.plan = allocate_steps(iqr_clusters(weights.data()), bits);
  r.codebook = make_codebook(r.plan);
  r.weights = Tensor(weights.shape());
  for (std::size_t i = 0; i < weights.size(); ++i) r.weights[i] = r.codebook.apply(weights[i]);
  return r;
}

}  // namespace retroquant
