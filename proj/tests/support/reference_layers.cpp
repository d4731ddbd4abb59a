// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "reference_layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rq_test {

using retroquant::BnMode;
using retroquant::LayerKind;
using retroquant::Shape;
using retroquant::Tensor;

namespace {

std::vector<double> widen(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

RefLayer::RefLayer(const retroquant::LayerSpec& l)
    : kind(l.kind),
      weight(widen(l.weight)),
      bias(widen(l.bias)),
      gamma(widen(l.gamma)),
      beta(widen(l.beta)),
      running_mean(widen(l.running_mean)),
      running_var(widen(l.running_var)),
      weight_shape(l.weight.shape()),
      stride(l.stride),
      padding(l.padding),
      window(l.window),
      eps(l.eps) {}

std::vector<std::vector<double>*> RefLayer::trainable() {
  switch (kind) {
    case LayerKind::Conv2D:
    case LayerKind::Linear: return {&weight, &bias};
    case LayerKind::BatchNorm: return {&gamma, &beta};
    default: return {};
  }
}

RefTensor to_ref(const Tensor& t) { return {t.shape(), widen(t)}; }

RefTensor reference_forward(const RefLayer& l, const RefTensor& x, BnMode mode) {
  const Shape& s = x.shape;
  switch (l.kind) {
    case LayerKind::Conv2D: {
      const std::size_t n = s[0], ci = s[1], h = s[2], w = s[3];
      const std::size_t co = l.weight_shape[0], k = l.weight_shape[2];
      const std::size_t oh = (h + 2 * l.padding - k) / l.stride + 1;
      const std::size_t ow = (w + 2 * l.padding - k) / l.stride + 1;
      RefTensor y{{n, co, oh, ow}, std::vector<double>(n * co * oh * ow)};
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
              double acc = l.bias[o];
              for (std::size_t i = 0; i < ci; ++i)
                for (std::size_t u = 0; u < k; ++u)
                  for (std::size_t v = 0; v < k; ++v) {
                    const long yy = static_cast<long>(r * l.stride + u) - static_cast<long>(l.padding);
                    const long xx = static_cast<long>(c * l.stride + v) - static_cast<long>(l.padding);
                    if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
                      continue;
                    acc += l.weight[((o * ci + i) * k + u) * k + v] *
                           x.data[((b * ci + i) * h + yy) * w + xx];
                  }
              y.data[((b * co + o) * oh + r) * ow + c] = acc;
            }
      return y;
    }
    case LayerKind::Linear: {
      const std::size_t n = s[0], in = s[1], out = l.weight_shape[0];
      RefTensor y{{n, out}, std::vector<double>(n * out)};
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < out; ++o) {
          double acc = l.bias[o];
          for (std::size_t i = 0; i < in; ++i) acc += l.weight[o * in + i] * x.data[b * in + i];
          y.data[b * out + o] = acc;
        }
      return y;
    }
    case LayerKind::BatchNorm: {
      const std::size_t n = s[0], ch = s[1], inner = s.size() == 4 ? s[2] * s[3] : 1;
      RefTensor y{s, std::vector<double>(x.data.size())};
      for (std::size_t c = 0; c < ch; ++c) {
        double mean = l.running_mean[c], var = l.running_var[c];
        if (mode == BnMode::Training) {
          mean = var = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < inner; ++i) mean += x.data[(b * ch + c) * inner + i];
          mean /= static_cast<double>(n * inner);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < inner; ++i) {
              const double d = x.data[(b * ch + c) * inner + i] - mean;
              var += d * d;
            }
          var /= static_cast<double>(n * inner);
        }
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t at = (b * ch + c) * inner + i;
            y.data[at] = l.gamma[c] * (x.data[at] - mean) / std::sqrt(var + l.eps) + l.beta[c];
          }
      }
      return y;
    }
    case LayerKind::ReLU: {
      RefTensor y = x;
      for (double& v : y.data) v = std::max(v, 0.0);
      return y;
    }
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      const std::size_t n = s[0], ch = s[1], h = s[2], w = s[3];
      const std::size_t oh = (h - l.window) / l.stride + 1, ow = (w - l.window) / l.stride + 1;
      RefTensor y{{n, ch, oh, ow}, std::vector<double>(n * ch * oh * ow)};
      for (std::size_t p = 0; p < n * ch; ++p)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c) {
            double acc = l.kind == LayerKind::MaxPool ? -std::numeric_limits<double>::infinity()
                                                      : 0.0;
            for (std::size_t u = 0; u < l.window; ++u)
              for (std::size_t v = 0; v < l.window; ++v) {
                const double val = x.data[(p * h + r * l.stride + u) * w + c * l.stride + v];
                acc = l.kind == LayerKind::MaxPool ? std::max(acc, val) : acc + val;
              }
            if (l.kind == LayerKind::AvgPool) acc /= static_cast<double>(l.window * l.window);
            y.data[(p * oh + r) * ow + c] = acc;
          }
      return y;
    }
    case LayerKind::Flatten:
      return {{s[0], x.data.size() / s[0]}, x.data};
    case LayerKind::Softmax: {
      const std::size_t n = s[0], k = s[1];
      RefTensor y = x;
      for (std::size_t b = 0; b < n; ++b) {
        double m = -std::numeric_limits<double>::infinity(), total = 0.0;
        for (std::size_t j = 0; j < k; ++j) m = std::max(m, x.data[b * k + j]);
        for (std::size_t j = 0; j < k; ++j) total += std::exp(x.data[b * k + j] - m);
        for (std::size_t j = 0; j < k; ++j)
          y.data[b * k + j] = std::exp(x.data[b * k + j] - m) / total;
      }
      return y;
    }
  }
  return {};
}

}  // namespace rq_test
