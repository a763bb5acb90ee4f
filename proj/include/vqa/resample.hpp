#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vqa/errors.hpp"
#include "vqa/tensor.hpp"

namespace vqa {

namespace detail {

// Keys bicubic kernel with a = -0.5 (the Catmull-Rom member).
inline double bicubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::fabs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return a * (((x - 5.0) * x + 8.0) * x - 4.0);
  return 0.0;
}

struct TapSet {
  std::vector<int64_t> index;  // 4 per output coordinate, edge-clamped
  std::vector<double> weight;
};

// align-corners-false mapping: src = (dst + 0.5) * in/out - 0.5.
inline TapSet bicubic_taps(int64_t in, int64_t out) {
  TapSet taps;
  taps.index.resize(static_cast<std::size_t>(out) * 4);
  taps.weight.resize(static_cast<std::size_t>(out) * 4);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    const int64_t i0 = static_cast<int64_t>(base);
    for (int64_t k = 0; k < 4; ++k) {
      const int64_t idx = i0 - 1 + k;
      taps.index[static_cast<std::size_t>(o * 4 + k)] =
          std::clamp<int64_t>(idx, 0, in - 1);
      taps.weight[static_cast<std::size_t>(o * 4 + k)] =
          bicubic_weight(t - static_cast<double>(k - 1));
    }
  }
  return taps;
}

}  // namespace detail

// Bicubic resize of a [C,H,W] image, separable two-pass, edge-clamped
// sampling, output clamped to [0,1].
inline Tensor bicubic_resize(const Tensor& image, int64_t out_h, int64_t out_w) {
  if (image.rank() != 3)
    throw DataError("bicubic_resize expects [C,H,W], got " +
                    shape_str(image.shape()));
  if (out_h < 1 || out_w < 1)
    throw DataError("bicubic_resize: target size must be >= 1");
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const detail::TapSet tx = detail::bicubic_taps(w, out_w);
  const detail::TapSet ty = detail::bicubic_taps(h, out_h);

  Tensor horiz({c, h, out_w});
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t y = 0; y < h; ++y) {
      const double* row = image.data() + (ch * h + y) * w;
      double* orow = horiz.data() + (ch * h + y) * out_w;
      for (int64_t x = 0; x < out_w; ++x) {
        const std::size_t b = static_cast<std::size_t>(x * 4);
        orow[x] = row[tx.index[b]] * tx.weight[b] +
                  row[tx.index[b + 1]] * tx.weight[b + 1] +
                  row[tx.index[b + 2]] * tx.weight[b + 2] +
                  row[tx.index[b + 3]] * tx.weight[b + 3];
      }
    }
  }

  Tensor out({c, out_h, out_w});
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t y = 0; y < out_h; ++y) {
      const std::size_t b = static_cast<std::size_t>(y * 4);
      double* orow = out.data() + (ch * out_h + y) * out_w;
      const double* r0 = horiz.data() + (ch * h + ty.index[b]) * out_w;
      const double* r1 = horiz.data() + (ch * h + ty.index[b + 1]) * out_w;
      const double* r2 = horiz.data() + (ch * h + ty.index[b + 2]) * out_w;
      const double* r3 = horiz.data() + (ch * h + ty.index[b + 3]) * out_w;
      for (int64_t x = 0; x < out_w; ++x) {
        const double v = r0[x] * ty.weight[b] + r1[x] * ty.weight[b + 1] +
                         r2[x] * ty.weight[b + 2] + r3[x] * ty.weight[b + 3];
        orow[x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace vqa
