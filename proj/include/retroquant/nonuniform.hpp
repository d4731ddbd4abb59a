// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include "retroquant/tensor.hpp"

namespace retroquant {

/// Quartiles by the median-of-halves rule: for 2n or 2n+1 values, Q1 is the
/// median of the n smallest and Q3 the median of the n largest (the middle
/// element of an odd list belongs to neither half). A single value is its
/// own Q1, Q2 and Q3.
struct Quartiles {
  double q1 = 0.0;
  double q2 = 0.0;
  double q3 = 0.0;

  double iqr() const noexcept { return q3 - q1; }
};

/// Throws EmptyInput.
Quartiles quartiles(std::span<const float> values);

/// One of the three value clusters of a weight tensor.
struct Cluster {
  std::size_t count = 0;   // W_i
  float lo = 0.0f;         // member min (0 when empty)
  float hi = 0.0f;         // member max
  std::size_t steps = 0;   // S_i, 0 until allocated

  bool empty() const noexcept { return count == 0; }
  /// R_i = hi - lo over members; 0 for empty or single-valued clusters.
  double range() const noexcept { return empty() ? 0.0 : static_cast<double>(hi) - lo; }
};

/// Three-way split at the outlier fences Q1 - 1.5 IQR and Q3 + 1.5 IQR:
///   clusters[0]  values <  lower_fence
///   clusters[1]  values in [lower_fence, upper_fence]
///   clusters[2]  values >  upper_fence
struct ClusterPlan {
  Quartiles quartiles;
  float lower_fence = 0.0f;
  float upper_fence = 0.0f;
  std::array<Cluster, 3> clusters{};
  int bits = 0;  // set by allocate_steps

  std::size_t cluster_of(float value) const noexcept {
    if (value < lower_fence) return 0;
    if (value > upper_fence) return 2;
    return 1;
  }
  std::size_t total_steps() const noexcept {
    return clusters[0].steps + clusters[1].steps + clusters[2].steps;
  }
  std::size_t nonempty_count() const noexcept;
};

/// Throws EmptyInput.
ClusterPlan iqr_clusters(std::span<const float> values);

/// Splits `budget` codes across clusters in proportion to `products`
/// (largest-remainder rounding, ties to the lower index), then moves codes
/// from the largest allocation so every nonempty cluster keeps at least one.
/// When every product is zero the counts are used as weights instead.
/// Throws BudgetTooSmall when budget < number of nonempty clusters.
std::array<std::size_t, 3> apportion_steps(const std::array<double, 3>& products,
                                           const std::array<std::size_t, 3>& counts,
                                           std::size_t budget);

/// Allocates S_i proportional to R_i * W_i with sum(S_i) == 2^bits.
ClusterPlan allocate_steps(ClusterPlan plan, int bits);

/// Uniform grid of `steps` codes over one cluster. The cluster whose value
/// interval contains 0 uses a zero-aligned affine grid (real 0 is exact);
/// the others use a grid anchored at the cluster minimum.
struct ClusterQuantizer {
  float lo = 0.0f;
  float hi = 0.0f;
  std::size_t steps = 0;
  float scale = 0.0f;
  std::int32_t zero_point = 0;  // zero-aligned grid only
  float anchor = 0.0f;          // value of code 0 on an anchored grid
  bool zero_aligned = false;

  std::int32_t encode(float value) const noexcept;
  float decode(std::int32_t code) const noexcept;
  float apply(float value) const noexcept { return decode(encode(value)); }

  friend bool operator==(const ClusterQuantizer&, const ClusterQuantizer&) = default;
};

/// Per-tensor non-uniform codebook: fences select the cluster, then that
/// cluster's quantizer maps the value.
struct NonUniformCodebook {
  Quartiles quartiles;
  float lower_fence = 0.0f;
  float upper_fence = 0.0f;
  std::array<ClusterQuantizer, 3> clusters{};
  int bits = 8;

  std::size_t cluster_of(float value) const noexcept {
    if (value < lower_fence) return 0;
    if (value > upper_fence) return 2;
    return 1;
  }
  float apply(float value) const noexcept { return clusters[cluster_of(value)].apply(value); }
};

ClusterQuantizer make_cluster_quantizer(const Cluster& cluster, bool zero_aligned);
NonUniformCodebook make_codebook(const ClusterPlan& plan);

struct NonUniformResult {
  ClusterPlan plan;
  NonUniformCodebook codebook;
  Tensor weights;  // fake-quantized, same shape as the input
};

/// Clusters, allocates 2^bits codes and fake-quantizes every weight within
/// its cluster. Throws EmptyInput or BudgetTooSmall.
NonUniformResult nonuniform_quantize(const Tensor& weights, int bits);

}  // namespace retroquant
