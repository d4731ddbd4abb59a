// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "retroquant/error.hpp"

namespace retroquant {

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w;      // input
  std::size_t o, kh, kw;       // filters
  std::size_t oh, ow;          // output
  std::size_t stride, pad;
};

ConvGeometry conv_geometry(const LayerSpec& layer, const Shape& in) {
  require(in.size() == 4, ErrorKind::ShapeMismatch,
          "conv2d expects [n,c,h,w] input, got " + shape_to_string(in));
  const Shape& ws = layer.weight.shape();
  require(in[1] == ws[1], ErrorKind::ShapeMismatch,
          "conv2d expects " + std::to_string(ws[1]) + " input channels, got " +
              std::to_string(in[1]));
  const std::size_t ph = in[2] + 2 * layer.padding;
  const std::size_t pw = in[3] + 2 * layer.padding;
  require(ph >= ws[2] && pw >= ws[3], ErrorKind::ShapeMismatch,
          "conv2d kernel larger than padded input " + shape_to_string(in));
  ConvGeometry g{in[0], in[1], in[2], in[3], ws[0], ws[2], ws[3],
                 (ph - ws[2]) / layer.stride + 1, (pw - ws[3]) / layer.stride + 1,
                 layer.stride, layer.padding};
  return g;
}

// Output columns [lo, hi) whose input column ow*stride + k - pad lies in [0, w).
inline void valid_range(std::size_t k, std::size_t pad, std::size_t stride,
                        std::size_t extent, std::size_t out_extent,
                        std::size_t& lo, std::size_t& hi) {
  const long kk = static_cast<long>(k) - static_cast<long>(pad);
  const long s = static_cast<long>(stride);
  long first = 0;
  if (kk < 0) first = (-kk + s - 1) / s;
  long last = (static_cast<long>(extent) - 1 - kk);
  last = last < 0 ? -1 : last / s;
  lo = static_cast<std::size_t>(std::min<long>(first, static_cast<long>(out_extent)));
  hi = static_cast<std::size_t>(
      std::clamp<long>(last + 1, static_cast<long>(lo), static_cast<long>(out_extent)));
}

// Unfolds one sample into col[(c * kh + ki) * kw + kj][r * ow + q], rows `ld`
// apart; padded taps are 0.
void im2col(const ConvGeometry& g, const float* xp, float* col, std::size_t ld) {
  const std::size_t out_plane = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c) {
    const float* xc = xp + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      std::size_t r0, r1;
      valid_range(ki, g.pad, g.stride, g.h, g.oh, r0, r1);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        float* dst = col + ((c * g.kh + ki) * g.kw + kj) * ld;
        std::fill(dst, dst + out_plane, 0.0f);
        std::size_t c0, c1;
        valid_range(kj, g.pad, g.stride, g.w, g.ow, c0, c1);
        const std::size_t shift = kj - g.pad;  // modular; col + shift >= 0
        for (std::size_t r = r0; r < r1; ++r) {
          const float* xr = xc + (r * g.stride + ki - g.pad) * g.w;
          float* dr = dst + r * g.ow;
          for (std::size_t q = c0; q < c1; ++q) dr[q] = xr[q * g.stride + shift];
        }
      }
    }
  }
}

// Adds col back into the sample gradient; inverse scatter of im2col.
void col2im_add(const ConvGeometry& g, const float* col, std::size_t ld, float* gxp) {
  for (std::size_t c = 0; c < g.c; ++c) {
    float* gc = gxp + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      std::size_t r0, r1;
      valid_range(ki, g.pad, g.stride, g.h, g.oh, r0, r1);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const float* src = col + ((c * g.kh + ki) * g.kw + kj) * ld;
        std::size_t c0, c1;
        valid_range(kj, g.pad, g.stride, g.w, g.ow, c0, c1);
        const std::size_t shift = kj - g.pad;
        for (std::size_t r = r0; r < r1; ++r) {
          float* gr = gc + (r * g.stride + ki - g.pad) * g.w;
          const float* sr = src + r * g.ow;
          for (std::size_t q = c0; q < c1; ++q) gr[q * g.stride + shift] += sr[q];
        }
      }
    }
  }
}

float dot(const float* a, const float* b, std::size_t n) {
  float lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) lanes[j] += a[i + j] * b[i + j];
  float s = 0.0f;
  for (; i < n; ++i) s += a[i] * b[i];
  for (float l : lanes) s += l;
  return s;
}

// Register-tiled micro-kernel over vectors of `V`, kRows rows by two vectors.
template <typename V>
__attribute__((always_inline)) inline void gemm_tiles(std::size_t m, std::size_t n,
                                                     std::size_t k, const float* a,
                                                     std::size_t lda, const float* b,
                                                     std::size_t ldb, float* c, std::size_t ldc) {
  constexpr std::size_t kRows = 4, kWidth = sizeof(V) / sizeof(float), kCols = 2 * kWidth;
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) {
    std::size_t j = 0;
    for (; j + kCols <= n; j += kCols) {
      V acc[kRows][2] = {};
      for (std::size_t p = 0; p < k; ++p) {
        V b0, b1;
        std::memcpy(&b0, b + p * ldb + j, sizeof b0);
        std::memcpy(&b1, b + p * ldb + j + kWidth, sizeof b1);
        for (std::size_t r = 0; r < kRows; ++r) {
          const float av = a[(i + r) * lda + p];
          acc[r][0] += av * b0;
          acc[r][1] += av * b1;
        }
      }
      for (std::size_t r = 0; r < kRows; ++r)
        for (std::size_t q = 0; q < kCols; ++q)
          c[(i + r) * ldc + j + q] += acc[r][q / kWidth][q % kWidth];
    }
    for (; j < n; ++j)
      for (std::size_t r = 0; r < kRows; ++r) {
        float acc = 0.0f;
        for (std::size_t p = 0; p < k; ++p) acc += a[(i + r) * lda + p] * b[p * ldb + j];
        c[(i + r) * ldc + j] += acc;
      }
  }
  for (; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[i * lda + p];
      const float* bp = b + p * ldb;
      float* ci = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

using Float4 = float __attribute__((vector_size(16)));
using Float8 = float __attribute__((vector_size(32)));

void gemm_generic(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                  const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_tiles<Float4>(m, n, k, a, lda, b, ldb, c, ldc);
}

#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
#define RETROQUANT_HAVE_AVX2_GEMM 1
__attribute__((target("avx2,fma"))) void gemm_avx2(std::size_t m, std::size_t n, std::size_t k,
                                                   const float* a, std::size_t lda,
                                                   const float* b, std::size_t ldb, float* c,
                                                   std::size_t ldc) {
  gemm_tiles<Float8>(m, n, k, a, lda, b, ldb, c, ldc);
}
#endif

// c[m x n] += a[m x k] * b[k x n], row-major with leading dimensions.
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
              const float* b, std::size_t ldb, float* c, std::size_t ldc) {
#ifdef RETROQUANT_HAVE_AVX2_GEMM
  static const bool avx2 = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  if (avx2) return gemm_avx2(m, n, k, a, lda, b, ldb, c, ldc);
#endif
  gemm_generic(m, n, k, a, lda, b, ldb, c, ldc);
}

// Samples unfolded together so that each GEMM sees at least this many columns.
constexpr std::size_t kColumnTarget = 256;

std::size_t samples_per_chunk(const ConvGeometry& g) {
  return std::max<std::size_t>(1, kColumnTarget / (g.oh * g.ow));
}

Tensor conv_forward(const LayerSpec& layer, const Tensor& input) {
  const ConvGeometry g = conv_geometry(layer, input.shape());
  Tensor out({g.n, g.o, g.oh, g.ow});
  const std::size_t k_len = g.c * g.kh * g.kw, out_plane = g.oh * g.ow;
  const std::size_t in_size = g.c * g.h * g.w, chunk = samples_per_chunk(g);
  std::vector<float> col(k_len * chunk * out_plane), y(g.o * chunk * out_plane);
  const float* wt = layer.weight.data().data();
  const float* b = layer.bias.data().data();
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::size_t count = std::min(chunk, g.n - n0), cols = count * out_plane;
    for (std::size_t s = 0; s < count; ++s)
      im2col(g, input.data().data() + (n0 + s) * in_size, col.data() + s * out_plane, cols);
    for (std::size_t o = 0; o < g.o; ++o) std::fill_n(y.data() + o * cols, cols, b[o]);
    gemm_acc(g.o, cols, k_len, wt, k_len, col.data(), cols, y.data(), cols);
    for (std::size_t s = 0; s < count; ++s)
      for (std::size_t o = 0; o < g.o; ++o)
        std::copy_n(y.data() + o * cols + s * out_plane, out_plane,
                    out.data().data() + ((n0 + s) * g.o + o) * out_plane);
  }
  return out;
}

LayerGradients conv_backward(const LayerSpec& layer, const Tensor& input,
                             const Tensor& grad_out, bool want_params) {
  const ConvGeometry g = conv_geometry(layer, input.shape());
  LayerGradients grads;
  grads.input = Tensor(input.shape());
  Tensor gw, gb;
  if (want_params) {
    gw = Tensor(layer.weight.shape());
    gb = Tensor(layer.bias.shape());
  }
  const std::size_t k_len = g.c * g.kh * g.kw, out_plane = g.oh * g.ow;
  const std::size_t in_size = g.c * g.h * g.w, chunk = samples_per_chunk(g);
  std::vector<float> col(want_params ? k_len * chunk * out_plane : 0);
  std::vector<float> gcol(k_len * chunk * out_plane), gy(g.o * chunk * out_plane);
  std::vector<float> wt_t(k_len * g.o);
  for (std::size_t o = 0; o < g.o; ++o)
    for (std::size_t k = 0; k < k_len; ++k) wt_t[k * g.o + o] = layer.weight[o * k_len + k];
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::size_t count = std::min(chunk, g.n - n0), cols = count * out_plane;
    for (std::size_t s = 0; s < count; ++s)
      for (std::size_t o = 0; o < g.o; ++o)
        std::copy_n(grad_out.data().data() + ((n0 + s) * g.o + o) * out_plane, out_plane,
                    gy.data() + o * cols + s * out_plane);
    std::fill_n(gcol.begin(), k_len * cols, 0.0f);
    gemm_acc(k_len, cols, g.o, wt_t.data(), g.o, gy.data(), cols, gcol.data(), cols);
    for (std::size_t s = 0; s < count; ++s)
      col2im_add(g, gcol.data() + s * out_plane, cols,
                 grads.input.data().data() + (n0 + s) * in_size);
    if (!want_params) continue;
    for (std::size_t s = 0; s < count; ++s)
      im2col(g, input.data().data() + (n0 + s) * in_size, col.data() + s * out_plane, cols);
    for (std::size_t o = 0; o < g.o; ++o) {
      const float* go = gy.data() + o * cols;
      double sum = 0.0;
      for (std::size_t p = 0; p < cols; ++p) sum += go[p];
      gb[o] += static_cast<float>(sum);
      float* gwo = gw.data().data() + o * k_len;
      for (std::size_t k = 0; k < k_len; ++k) gwo[k] += dot(go, col.data() + k * cols, cols);
    }
  }
  if (want_params) grads.params = {std::move(gw), std::move(gb)};
  return grads;
}

void check_linear_input(const LayerSpec& layer, const Tensor& input) {
  require(input.rank() == 2 && input.shape()[1] == layer.weight.shape()[1],
          ErrorKind::ShapeMismatch,
          "linear expects [n," + std::to_string(layer.weight.shape()[1]) +
              "] input, got " + shape_to_string(input.shape()));
}

Tensor linear_forward(const LayerSpec& layer, const Tensor& input) {
  check_linear_input(layer, input);
  const std::size_t n = input.shape()[0];
  const std::size_t in = layer.weight.shape()[1], out = layer.weight.shape()[0];
  Tensor y({n, out});
  for (std::size_t r = 0; r < n; ++r) {
    const float* x = input.data().data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const float* w = layer.weight.data().data() + o * in;
      float s = 0.0f;
      for (std::size_t i = 0; i < in; ++i) s += w[i] * x[i];
      y[r * out + o] = s + layer.bias[o];
    }
  }
  return y;
}

LayerGradients linear_backward(const LayerSpec& layer, const Tensor& input,
                               const Tensor& grad_out, bool want_params) {
  check_linear_input(layer, input);
  const std::size_t n = input.shape()[0];
  const std::size_t in = layer.weight.shape()[1], out = layer.weight.shape()[0];
  LayerGradients grads;
  grads.input = Tensor(input.shape());
  Tensor gw, gb;
  if (want_params) {
    gw = Tensor(layer.weight.shape());
    gb = Tensor(layer.bias.shape());
  }
  for (std::size_t r = 0; r < n; ++r) {
    const float* x = input.data().data() + r * in;
    float* gx = grads.input.data().data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const float g = grad_out[r * out + o];
      const float* w = layer.weight.data().data() + o * in;
      for (std::size_t i = 0; i < in; ++i) gx[i] += g * w[i];
      if (want_params) {
        float* gwr = gw.data().data() + o * in;
        for (std::size_t i = 0; i < in; ++i) gwr[i] += g * x[i];
        gb[o] += g;
      }
    }
  }
  if (want_params) grads.params = {std::move(gw), std::move(gb)};
  return grads;
}

struct BnLayout {
  std::size_t outer, channels, inner;
};

BnLayout bn_layout(const LayerSpec& layer, const Tensor& input) {
  require(input.rank() == 2 || input.rank() == 4, ErrorKind::ShapeMismatch,
          "batch_norm expects [n,c] or [n,c,h,w], got " +
              shape_to_string(input.shape()));
  const std::size_t c = layer.gamma.size();
  require(input.shape()[1] == c, ErrorKind::ShapeMismatch,
          "batch_norm expects " + std::to_string(c) + " channels, got " +
              std::to_string(input.shape()[1]));
  const std::size_t inner = input.rank() == 4 ? input.shape()[2] * input.shape()[3] : 1;
  return {input.shape()[0], c, inner};
}

// Per-channel (mean, inv_std) used to normalize: running stats or batch stats.
void bn_moments(const LayerSpec& layer, const Tensor& input, const BnLayout& L,
                BnMode mode, std::vector<double>& mean, std::vector<double>& inv_std) {
  mean.assign(L.channels, 0.0);
  inv_std.assign(L.channels, 0.0);
  if (mode == BnMode::Inference) {
    for (std::size_t c = 0; c < L.channels; ++c) {
      mean[c] = layer.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(layer.running_var[c]) + layer.eps);
    }
    return;
  }
  const ChannelStats s = channel_stats(input, 1);
  for (std::size_t c = 0; c < L.channels; ++c) {
    mean[c] = s.mean[c];
    const double var = static_cast<double>(s.std[c]) * s.std[c];
    inv_std[c] = 1.0 / std::sqrt(var + layer.eps);
  }
}

Tensor bn_forward(const LayerSpec& layer, const Tensor& input, BnMode mode) {
  const BnLayout L = bn_layout(layer, input);
  std::vector<double> mean, inv_std;
  bn_moments(layer, input, L, mode, mean, inv_std);
  Tensor y(input.shape());
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t c = 0; c < L.channels; ++c) {
      const double a = layer.gamma[c] * inv_std[c];
      const double b = layer.beta[c] - a * mean[c];
      const float* x = input.data().data() + (o * L.channels + c) * L.inner;
      float* yp = y.data().data() + (o * L.channels + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i)
        yp[i] = static_cast<float>(a * x[i] + b);
    }
  }
  return y;
}

LayerGradients bn_backward(const LayerSpec& layer, const Tensor& input,
                           const Tensor& grad_out, BnMode mode, bool want_params) {
  const BnLayout L = bn_layout(layer, input);
  std::vector<double> mean, inv_std;
  bn_moments(layer, input, L, mode, mean, inv_std);
  if (mode == BnMode::Inference && !want_params) {
    LayerGradients grads;
    grads.input = Tensor(input.shape());
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t c = 0; c < L.channels; ++c) {
        const std::size_t base = (o * L.channels + c) * L.inner;
        const auto scale = static_cast<float>(layer.gamma[c] * inv_std[c]);
        for (std::size_t i = 0; i < L.inner; ++i)
          grads.input[base + i] = grad_out[base + i] * scale;
      }
    return grads;
  }
  std::vector<double> sum_g(L.channels, 0.0), sum_gx(L.channels, 0.0);
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t c = 0; c < L.channels; ++c) {
      const std::size_t base = (o * L.channels + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        const double g = grad_out[base + i];
        sum_g[c] += g;
        sum_gx[c] += g * (input[base + i] - mean[c]) * inv_std[c];
      }
    }
  }
  LayerGradients grads;
  grads.input = Tensor(input.shape());
  const double m = static_cast<double>(L.outer * L.inner);
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t c = 0; c < L.channels; ++c) {
      const std::size_t base = (o * L.channels + c) * L.inner;
      const double gamma = layer.gamma[c];
      for (std::size_t i = 0; i < L.inner; ++i) {
        const double g = grad_out[base + i];
        if (mode == BnMode::Inference) {
          grads.input[base + i] = static_cast<float>(g * gamma * inv_std[c]);
        } else {
          const double xhat = (input[base + i] - mean[c]) * inv_std[c];
          grads.input[base + i] = static_cast<float>(
              gamma * inv_std[c] * (g - sum_g[c] / m - xhat * sum_gx[c] / m));
        }
      }
    }
  }
  if (want_params) {
    Tensor gg(layer.gamma.shape()), gbeta(layer.beta.shape());
    for (std::size_t c = 0; c < L.channels; ++c) {
      gg[c] = static_cast<float>(sum_gx[c]);
      gbeta[c] = static_cast<float>(sum_g[c]);
    }
    grads.params = {std::move(gg), std::move(gbeta)};
  }
  return grads;
}

struct PoolGeometry {
  std::size_t n, c, h, w, oh, ow, k, s;
};

PoolGeometry pool_geometry(const LayerSpec& layer, const Shape& in) {
  require(in.size() == 4, ErrorKind::ShapeMismatch,
          "pool expects [n,c,h,w], got " + shape_to_string(in));
  require(in[2] >= layer.window && in[3] >= layer.window, ErrorKind::ShapeMismatch,
          "pool window larger than input " + shape_to_string(in));
  return {in[0], in[1], in[2], in[3],
          (in[2] - layer.window) / layer.stride + 1,
          (in[3] - layer.window) / layer.stride + 1, layer.window, layer.stride};
}

Tensor pool_forward(const LayerSpec& layer, const Tensor& input, bool is_max) {
  const PoolGeometry g = pool_geometry(layer, input.shape());
  Tensor y({g.n, g.c, g.oh, g.ow});
  const float inv = 1.0f / static_cast<float>(g.k * g.k);
  for (std::size_t p = 0; p < g.n * g.c; ++p) {
    const float* x = input.data().data() + p * g.h * g.w;
    float* yp = y.data().data() + p * g.oh * g.ow;
    for (std::size_t r = 0; r < g.oh; ++r) {
      for (std::size_t col = 0; col < g.ow; ++col) {
        float acc = is_max ? x[(r * g.s) * g.w + col * g.s] : 0.0f;
        for (std::size_t i = 0; i < g.k; ++i)
          for (std::size_t j = 0; j < g.k; ++j) {
            const float v = x[(r * g.s + i) * g.w + col * g.s + j];
            if (is_max) acc = std::max(acc, v);
            else acc += v;
          }
        yp[r * g.ow + col] = is_max ? acc : acc * inv;
      }
    }
  }
  return y;
}

Tensor pool_backward(const LayerSpec& layer, const Tensor& input,
                     const Tensor& grad_out, bool is_max) {
  const PoolGeometry g = pool_geometry(layer, input.shape());
  Tensor gx(input.shape());
  const float inv = 1.0f / static_cast<float>(g.k * g.k);
  for (std::size_t p = 0; p < g.n * g.c; ++p) {
    const float* x = input.data().data() + p * g.h * g.w;
    float* gxp = gx.data().data() + p * g.h * g.w;
    const float* gy = grad_out.data().data() + p * g.oh * g.ow;
    for (std::size_t r = 0; r < g.oh; ++r) {
      for (std::size_t col = 0; col < g.ow; ++col) {
        const float gv = gy[r * g.ow + col];
        if (is_max) {
          std::size_t best = (r * g.s) * g.w + col * g.s;
          for (std::size_t i = 0; i < g.k; ++i)
            for (std::size_t j = 0; j < g.k; ++j) {
              const std::size_t idx = (r * g.s + i) * g.w + col * g.s + j;
              if (x[idx] > x[best]) best = idx;
            }
          gxp[best] += gv;
        } else {
          for (std::size_t i = 0; i < g.k; ++i)
            for (std::size_t j = 0; j < g.k; ++j)
              gxp[(r * g.s + i) * g.w + col * g.s + j] += gv * inv;
        }
      }
    }
  }
  return gx;
}

void require_rank2(const Tensor& t, const char* what) {
  require(t.rank() == 2, ErrorKind::ShapeMismatch,
          std::string(what) + " expects [n,k], got " + shape_to_string(t.shape()));
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::Linear: return "linear";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "max_pool";
    case LayerKind::AvgPool: return "avg_pool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Softmax: return "softmax";
  }
  return "unknown";
}

std::optional<LayerKind> parse_layer_kind(std::string_view name) noexcept {
  for (LayerKind k : {LayerKind::Conv2D, LayerKind::Linear, LayerKind::BatchNorm,
                      LayerKind::ReLU, LayerKind::MaxPool, LayerKind::AvgPool,
                      LayerKind::Flatten, LayerKind::Softmax}) {
    if (layer_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  LayerSpec l;
  l.kind = LayerKind::Conv2D;
  l.weight = Tensor({out_channels, in_channels, kernel, kernel});
  l.bias = Tensor({out_channels});
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::linear(std::size_t in_features, std::size_t out_features) {
  LayerSpec l;
  l.kind = LayerKind::Linear;
  l.weight = Tensor({out_features, in_features});
  l.bias = Tensor({out_features});
  return l;
}

LayerSpec LayerSpec::batch_norm(std::size_t channels, float eps) {
  LayerSpec l;
  l.kind = LayerKind::BatchNorm;
  l.gamma = Tensor({channels}, 1.0f);
  l.beta = Tensor({channels}, 0.0f);
  l.running_mean = Tensor({channels}, 0.0f);
  l.running_var = Tensor({channels}, 1.0f);
  l.eps = eps;
  return l;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::max_pool(std::size_t window, std::size_t stride) {
  LayerSpec l;
  l.kind = LayerKind::MaxPool;
  l.window = window;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::avg_pool(std::size_t window, std::size_t stride) {
  LayerSpec l = max_pool(window, stride);
  l.kind = LayerKind::AvgPool;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::Flatten;
  return l;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec l;
  l.kind = LayerKind::Softmax;
  return l;
}

std::vector<std::string_view> LayerSpec::parameter_names() const {
  switch (kind) {
    case LayerKind::Conv2D:
    case LayerKind::Linear: return {"weight", "bias"};
    case LayerKind::BatchNorm: return {"gamma", "beta", "running_mean", "running_var"};
    default: return {};
  }
}

std::vector<std::string_view> LayerSpec::trainable_names() const {
  switch (kind) {
    case LayerKind::Conv2D:
    case LayerKind::Linear: return {"weight", "bias"};
    case LayerKind::BatchNorm: return {"gamma", "beta"};
    default: return {};
  }
}

Tensor& LayerSpec::parameter(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).parameter(name));
}

const Tensor& LayerSpec::parameter(std::string_view name) const {
  if (name == "weight") return weight;
  if (name == "bias") return bias;
  if (name == "gamma") return gamma;
  if (name == "beta") return beta;
  if (name == "running_mean") return running_mean;
  if (name == "running_var") return running_var;
  fail(ErrorKind::InvalidArgument, "unknown parameter '" + std::string(name) + "'");
}

void LayerSpec::validate() const {
  const auto bad = [&](const std::string& what) {
    fail(ErrorKind::InvalidLayerParam,
         std::string(layer_kind_name(kind)) + ": " + what);
  };
  switch (kind) {
    case LayerKind::Conv2D:
      if (weight.rank() != 4) bad("weight must be rank 4");
      if (bias.shape() != Shape{weight.shape()[0]}) bad("bias must be [out]");
      if (stride == 0) bad("stride must be positive");
      if (weight.shape()[2] == 0 || weight.shape()[3] == 0) bad("empty kernel");
      break;
    case LayerKind::Linear:
      if (weight.rank() != 2) bad("weight must be rank 2");
      if (bias.shape() != Shape{weight.shape()[0]}) bad("bias must be [out]");
      break;
    case LayerKind::BatchNorm: {
      const Shape s = gamma.shape();
      if (s.size() != 1 || beta.shape() != s || running_mean.shape() != s ||
          running_var.shape() != s)
        bad("gamma/beta/running_mean/running_var must share shape [c]");
      if (!(eps >= 0.0f)) bad("eps must be non-negative");
      for (float v : running_var.data()) {
        if (!(v >= 0.0f)) bad("running_var must be non-negative");
        if (eps == 0.0f && v == 0.0f) bad("eps must be positive when running_var has zeros");
      }
      break;
    }
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      if (window == 0 || stride == 0) bad("window and stride must be positive");
      break;
    default:
      break;
  }
}

Shape layer_output_shape(const LayerSpec& layer, const Shape& in) {
  switch (layer.kind) {
    case LayerKind::Conv2D: {
      const ConvGeometry g = conv_geometry(layer, in);
      return {g.n, g.o, g.oh, g.ow};
    }
    case LayerKind::Linear:
      require(in.size() == 2 && in[1] == layer.weight.shape()[1],
              ErrorKind::ShapeMismatch,
              "linear expects [n," + std::to_string(layer.weight.shape()[1]) +
                  "], got " + shape_to_string(in));
      return {in[0], layer.weight.shape()[0]};
    case LayerKind::BatchNorm:
      require((in.size() == 2 || in.size() == 4) && in[1] == layer.gamma.size(),
              ErrorKind::ShapeMismatch,
              "batch_norm channel mismatch for " + shape_to_string(in));
      return in;
    case LayerKind::ReLU:
      return in;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      const PoolGeometry g = pool_geometry(layer, in);
      return {g.n, g.c, g.oh, g.ow};
    }
    case LayerKind::Flatten: {
      require(in.size() >= 2, ErrorKind::ShapeMismatch, "flatten needs rank >= 2");
      Shape rest(in.begin() + 1, in.end());
      return {in[0], shape_product(rest)};
    }
    case LayerKind::Softmax:
      require(in.size() == 2, ErrorKind::ShapeMismatch, "softmax expects [n,k]");
      return in;
  }
  fail(ErrorKind::UnsupportedLayer, "unknown layer kind");
}

Tensor layer_forward(const LayerSpec& layer, const Tensor& input, BnMode mode) {
  layer.validate();
  switch (layer.kind) {
    case LayerKind::Conv2D: return conv_forward(layer, input);
    case LayerKind::Linear: return linear_forward(layer, input);
    case LayerKind::BatchNorm:
      require(mode == BnMode::Inference || layer.eps > 0.0f,
              ErrorKind::InvalidLayerParam, "batch_norm training needs eps > 0");
      return bn_forward(layer, input, mode);
    case LayerKind::ReLU: {
      Tensor y(input.shape());
      for (std::size_t i = 0; i < input.size(); ++i) y[i] = std::max(input[i], 0.0f);
      return y;
    }
    case LayerKind::MaxPool: return pool_forward(layer, input, true);
    case LayerKind::AvgPool: return pool_forward(layer, input, false);
    case LayerKind::Flatten:
      return input.reshaped(layer_output_shape(layer, input.shape()));
    case LayerKind::Softmax:
      require_rank2(input, "softmax");
      return softmax_rows(input);
  }
  fail(ErrorKind::UnsupportedLayer, "unknown layer kind");
}

LayerGradients layer_backward(const LayerSpec& layer, const Tensor& input,
                              const Tensor& output, const Tensor& grad_output,
                              BnMode mode, bool want_params) {
  require(grad_output.shape() == output.shape(), ErrorKind::ShapeMismatch,
          "gradient shape " + shape_to_string(grad_output.shape()) +
              " does not match output " + shape_to_string(output.shape()));
  switch (layer.kind) {
    case LayerKind::Conv2D: return conv_backward(layer, input, grad_output, want_params);
    case LayerKind::Linear: return linear_backward(layer, input, grad_output, want_params);
    case LayerKind::BatchNorm:
      return bn_backward(layer, input, grad_output, mode, want_params);
    case LayerKind::ReLU: {
      LayerGradients g;
      g.input = Tensor(input.shape());
      for (std::size_t i = 0; i < input.size(); ++i)
        g.input[i] = input[i] > 0.0f ? grad_output[i] : 0.0f;
      return g;
    }
    case LayerKind::MaxPool: return {pool_backward(layer, input, grad_output, true), {}};
    case LayerKind::AvgPool: return {pool_backward(layer, input, grad_output, false), {}};
    case LayerKind::Flatten: return {grad_output.reshaped(input.shape()), {}};
    case LayerKind::Softmax: {
      require_rank2(output, "softmax");
      const std::size_t n = output.shape()[0], k = output.shape()[1];
      LayerGradients g;
      g.input = Tensor(output.shape());
      for (std::size_t r = 0; r < n; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          dot += static_cast<double>(grad_output[r * k + j]) * output[r * k + j];
        for (std::size_t j = 0; j < k; ++j)
          g.input[r * k + j] = static_cast<float>(
              output[r * k + j] * (grad_output[r * k + j] - dot));
      }
      return g;
    }
  }
  fail(ErrorKind::UnsupportedLayer, "no backward rule for layer kind");
}

}  // namespace retroquant
