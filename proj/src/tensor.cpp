// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "retroquant/error.hpp"

namespace retroquant {

std::string_view error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidLayerParam: return "InvalidLayerParam";
    case ErrorKind::UnsupportedLayer: return "UnsupportedLayer";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::InvalidAxis: return "InvalidAxis";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::TraceMismatch: return "TraceMismatch";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::ChannelMismatch: return "ChannelMismatch";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::IncompleteAssignment: return "IncompleteAssignment";
    case ErrorKind::IncompleteRanges: return "IncompleteRanges";
    case ErrorKind::NotQuantizable: return "NotQuantizable";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::BudgetTooSmall: return "BudgetTooSmall";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::UsageError: return "UsageError";
  }
  return "Unknown";
}

std::size_t shape_product(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == shape_product(shape_), ErrorKind::ShapeMismatch,
          "tensor data length " + std::to_string(data_.size()) +
              " does not match shape " + shape_to_string(shape_));
}

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < shape_.size(), ErrorKind::InvalidAxis,
          "axis " + std::to_string(axis) + " out of range for rank " +
              std::to_string(shape_.size()));
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_product(shape) == data_.size(), ErrorKind::ShapeMismatch,
          "cannot reshape " + shape_to_string(shape_) + " to " +
              shape_to_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  require(!shape_.empty() && begin <= end && end <= shape_[0],
          ErrorKind::ShapeMismatch, "row slice out of range");
  const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
  Shape out = shape_;
  out[0] = end - begin;
  return Tensor(std::move(out),
                std::vector<float>(data_.begin() + begin * row,
                                   data_.begin() + end * row));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

float Tensor::min() const {
  require(!data_.empty(), ErrorKind::EmptyInput, "min of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

float Tensor::max() const {
  require(!data_.empty(), ErrorKind::EmptyInput, "max of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), ErrorKind::EmptyInput, "nothing to concatenate");
  Shape shape = parts[0].shape();
  require(!shape.empty(), ErrorKind::ShapeMismatch, "cannot concat scalars");
  std::size_t rows = 0;
  std::vector<float> data;
  for (const auto& p : parts) {
    require(p.rank() == shape.size() &&
                std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1),
            ErrorKind::ShapeMismatch, "concat: trailing dims differ");
    rows += p.shape()[0];
    data.insert(data.end(), p.storage().begin(), p.storage().end());
  }
  shape[0] = rows;
  return Tensor(std::move(shape), std::move(data));
}

ChannelStats channel_stats(const Tensor& activation, std::size_t channel_axis) {
  require(activation.rank() >= 2, ErrorKind::InvalidAxis,
          "channel_stats needs rank >= 2");
  require(channel_axis < activation.rank(), ErrorKind::InvalidAxis,
          "channel axis out of range");
  const auto& shape = activation.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < channel_axis; ++i) outer *= shape[i];
  for (std::size_t i = channel_axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t channels = shape[channel_axis];
  const double count = static_cast<double>(outer * inner);

  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  const float* x = activation.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const float* p = x + (o * channels + c) * inner;
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += p[i];
      sum[c] += s;
    }
  }
  ChannelStats stats;
  stats.mean.resize(channels);
  stats.std.resize(channels);
  std::vector<double> mean(channels);
  for (std::size_t c = 0; c < channels; ++c) mean[c] = sum[c] / count;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const float* p = x + (o * channels + c) * inner;
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const double d = p[i] - mean[c];
        s += d * d;
      }
      sq[c] += s;
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    stats.mean[c] = static_cast<float>(mean[c]);
    stats.std[c] = static_cast<float>(std::sqrt(sq[c] / count));
  }
  return stats;
}

Tensor softmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, ErrorKind::ShapeMismatch,
          "softmax_rows expects [n, k], got " + shape_to_string(logits.shape()));
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const float* z = logits.data().data() + r * k;
    float* p = out.data().data() + r * k;
    const float m = *std::max_element(z, z + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(z[j]) - m);
      p[j] = static_cast<float>(e);
      total += e;
    }
    for (std::size_t j = 0; j < k; ++j)
      p[j] = static_cast<float>(static_cast<double>(p[j]) / total);
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& t) {
  require(t.rank() == 2, ErrorKind::ShapeMismatch, "argmax_rows expects [n, k]");
  const std::size_t n = t.shape()[0], k = t.shape()[1];
  std::vector<std::size_t> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const float* z = t.data().data() + r * k;
    out[r] = static_cast<std::size_t>(std::max_element(z, z + k) - z);
  }
  return out;
}

}  // namespace retroquant
