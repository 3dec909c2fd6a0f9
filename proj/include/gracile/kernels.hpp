// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-sample compute kernels shared by the plain forward pass and the
// incremental evaluator. Both paths call these functions with the same
// operands in the same order, so their float results agree bit for bit.
//
// Reduction order, fixed by design:
//   conv2d: partial[o][c] = sum over (kh, kw) in row-major order, starting at
//           0.0f; output[o] = ((bias[o] + partial[o][0]) + partial[o][1]) + ...
//   fc:     partial[j][b] = sum over the b-th block of kFcBlock inputs in
//           index order, starting at 0.0f; output[j] = bias[j] + partials in
//           block order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "gracile/model.hpp"

namespace gracile::kernels {

inline constexpr std::size_t kFcBlock = 16;

inline std::size_t fc_blocks(std::size_t in_features) { return (in_features + kFcBlock - 1) / kFcBlock; }

// Copies an h x w channel into the centre of a zero-filled (h+2p) x (w+2p)
// buffer. Explicit zeros keep inf * 0 = NaN semantics at the border.
inline void pad_channel(const float* in, std::size_t h, std::size_t w, std::size_t pad, float* out) {
  const std::size_t pw = w + 2 * pad;
  std::fill(out, out + (h + 2 * pad) * pw, 0.0f);
  for (std::size_t y = 0; y < h; ++y) std::copy(in + y * w, in + y * w + w, out + (y + pad) * pw + pad);
}

// One (output channel, input channel) partial sum over a k x k kernel.
// `in` is the (padded) input channel of width `iw`.
inline void conv_partial(const float* in, std::size_t iw, const float* kernel, std::size_t k,
                         std::size_t stride, std::size_t oh, std::size_t ow, float* out) {
  std::fill(out, out + oh * ow, 0.0f);
  for (std::size_t kh = 0; kh < k; ++kh) {
    for (std::size_t kw = 0; kw < k; ++kw) {
      const float wv = kernel[kh * k + kw];
      for (std::size_t y = 0; y < oh; ++y) {
        const float* row = in + (y * stride + kh) * iw + kw;
        float* dst = out + y * ow;
        if (stride == 1) {
          for (std::size_t x = 0; x < ow; ++x) dst[x] += wv * row[x];
        } else {
          for (std::size_t x = 0; x < ow; ++x) dst[x] += wv * row[x * stride];
        }
      }
    }
  }
}

// out[p] = ((bias + partials[0][p]) + partials[1][p]) + ...
inline void conv_combine(float bias, const float* const* partials, std::size_t channels, std::size_t n,
                         float* out) {
  std::fill(out, out + n, bias);
  for (std::size_t c = 0; c < channels; ++c) {
    const float* src = partials[c];
    for (std::size_t p = 0; p < n; ++p) out[p] += src[p];
  }
}

inline float fc_block_sum(const float* w, const float* in, std::size_t len) {
  float s = 0.0f;
  for (std::size_t i = 0; i < len; ++i) s += w[i] * in[i];
  return s;
}

inline std::size_t fc_block_len(std::size_t block, std::size_t in_features) {
  return std::min(kFcBlock, in_features - block * kFcBlock);
}

inline float fc_partial(const float* weight_row, const float* in, std::size_t block, std::size_t in_features) {
  const std::size_t begin = block * kFcBlock;
  return fc_block_sum(weight_row + begin, in + begin, fc_block_len(block, in_features));
}

inline float fc_combine(float bias, const float* partials, std::size_t blocks) {
  float s = bias;
  for (std::size_t b = 0; b < blocks; ++b) s += partials[b];
  return s;
}

// Max over each window. A NaN anywhere in the window yields NaN.
inline void maxpool_channel(const float* in, std::size_t h, std::size_t w, std::size_t pool,
                            std::size_t stride, std::size_t oh, std::size_t ow, float* out) {
  (void)h;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      float m = in[(y * stride) * w + x * stride];
      for (std::size_t py = 0; py < pool; ++py) {
        for (std::size_t px = 0; px < pool; ++px) {
          const float v = in[(y * stride + py) * w + x * stride + px];
          if (v > m || std::isnan(v)) m = std::isnan(m) ? m : v;
        }
      }
      out[y * ow + x] = m;
    }
  }
}

// y = (x - mean) * (gamma / sqrt(var + eps)) + beta
inline void batchnorm_channel(const float* in, std::size_t n, float gamma, float beta, float mean,
                              float var, float eps, float* out) {
  const float s = gamma / std::sqrt(var + eps);
  for (std::size_t p = 0; p < n; ++p) out[p] = (in[p] - mean) * s + beta;
}

// Element-wise activation on one channel. ReLU, ReLU6 and ReLUClamp map NaN
// to 0; Tanh and PReLU propagate it. Softmax is row-wise, see softmax_row.
inline void activate(ActivationKind kind, float slope, float bound, float* x, std::size_t n) {
  switch (kind) {
    case ActivationKind::kNone:
    case ActivationKind::kSoftmax:
      return;
    case ActivationKind::kReLU:
      for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0f ? x[i] : 0.0f;
      return;
    case ActivationKind::kReLU6:
      for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0f ? (x[i] < 6.0f ? x[i] : 6.0f) : 0.0f;
      return;
    case ActivationKind::kReLUClamp:
      for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0f ? (x[i] < bound ? x[i] : bound) : 0.0f;
      return;
    case ActivationKind::kPReLU:
      for (std::size_t i = 0; i < n; ++i) x[i] = x[i] >= 0.0f ? x[i] : slope * x[i];
      return;
    case ActivationKind::kTanh:
      for (std::size_t i = 0; i < n; ++i) x[i] = std::tanh(x[i]);
      return;
  }
}

// Numerically shifted softmax. A NaN or +inf logit turns the row into NaN,
// which accuracy counts as misclassified.
inline void softmax_row(const float* in, std::size_t n, float* out) {
  float m = in[0];
  bool nan = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(in[i])) nan = true;
    m = in[i] > m ? in[i] : m;
  }
  if (nan) {
    std::fill(out, out + n, std::nanf(""));
    return;
  }
  float sum = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - m);
    sum += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = out[i] / sum;
}

// Rank of the true class: classes with a larger score, or an equal score
// and a lower index, come first. Rows with any NaN get rank n.
inline std::size_t label_rank(const float* scores, std::size_t n, std::size_t label) {
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(scores[i])) return n;
  }
  const float s = scores[label];
  std::size_t rank = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (scores[i] > s || (scores[i] == s && i < label)) ++rank;
  }
  return rank;
}

inline std::size_t argmax(const float* scores, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

}  // namespace gracile::kernels
