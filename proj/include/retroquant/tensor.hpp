// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace retroquant {

using Shape = std::vector<std::size_t>;

std::size_t shape_product(const Shape& shape) noexcept;
std::string shape_to_string(const Shape& shape);

/// Dense row-major float32 tensor. Owns its storage; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same data, new shape. Throws ShapeMismatch if element counts differ.
  Tensor reshaped(Shape shape) const;

  /// Rows [begin, end) along axis 0.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  bool all_finite() const noexcept;
  float min() const;
  float max() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Concatenates tensors along axis 0; trailing dims must agree.
Tensor concat_rows(std::span<const Tensor> parts);

/// Per-channel mean and population standard deviation.
struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> std;

  std::size_t channels() const noexcept { return mean.size(); }
};

/// Statistics of every channel along `channel_axis`, pooled over all other axes.
ChannelStats channel_stats(const Tensor& activation, std::size_t channel_axis);

/// Row-wise softmax of a [n, k] tensor, computed with max subtraction.
Tensor softmax_rows(const Tensor& logits);

/// Index of the largest entry of each row of a [n, k] tensor (first on ties).
std::vector<std::size_t> argmax_rows(const Tensor& t);

}  // namespace retroquant
