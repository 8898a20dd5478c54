#pragma once

#include <algorithm>
#include <cmath>

#include "metainput/dataset.hpp"

namespace metainput {

/// ITU-R BT.601 luma. Single-channel input is returned unchanged.
inline Tensor to_grayscale(const Tensor& images) {
  if (images.rank() != 4) throw ShapeError("to_grayscale: expected N×H×W×C, got " + shape_str(images.shape()));
  const std::size_t c = images.dim(3);
  if (c == 1) return images;
  if (c != 3) throw ShapeError("to_grayscale: expected 1 or 3 channels, got " + shape_str(images.shape()));
  const std::size_t pixels = images.size() / 3;
  Tensor out({images.dim(0), images.dim(1), images.dim(2), 1});
  auto src = images.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < pixels; ++p) {
    dst[p] = 0.299f * src[3 * p] + 0.587f * src[3 * p + 1] + 0.114f * src[3 * p + 2];
  }
  return out;
}

/// Bilinear resize with half-pixel centers; samples outside the source are
/// clamped to the border.
inline Tensor resize_bilinear(const Tensor& images, std::size_t out_h, std::size_t out_w) {
  if (images.rank() != 4) throw ShapeError("resize_bilinear: expected N×H×W×C, got " + shape_str(images.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: zero output extent");
  const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  if (h == out_h && w == out_w) return images;
  Tensor out({n, out_h, out_w, c});
  auto src = images.data();
  auto dst = out.data();
  auto axis = [](std::size_t o, std::size_t in, std::size_t out_n, std::size_t& i0,
                 std::size_t& i1, float& frac) {
    float s = (static_cast<float>(o) + 0.5f) * static_cast<float>(in) / static_cast<float>(out_n) - 0.5f;
    s = std::clamp(s, 0.0f, static_cast<float>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    frac = s - static_cast<float>(i0);
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < out_h; ++y) {
      std::size_t y0, y1;
      float fy;
      axis(y, h, out_h, y0, y1, fy);
      for (std::size_t x = 0; x < out_w; ++x) {
        std::size_t x0, x1;
        float fx;
        axis(x, w, out_w, x0, x1, fx);
        for (std::size_t ch = 0; ch < c; ++ch) {
          auto at = [&](std::size_t yy, std::size_t xx) { return src[((b * h + yy) * w + xx) * c + ch]; };
          const float top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
          const float bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
          dst[((b * out_h + y) * out_w + x) * c + ch] = top + (bottom - top) * fy;
        }
      }
    }
  return out;
}

/// Digit-benchmark preprocessing: grayscale, then bilinear resize to 28×28.
inline Dataset preprocess_digits(const Dataset& ds) {
  if (ds.images.rank() != 4) throw ShapeError("preprocess_digits: expected N×H×W×C, got " + shape_str(ds.images.shape()));
  Dataset out = ds;
  if (ds.image_shape() == ImageShape{28, 28, 1}) return out;
  out.images = resize_bilinear(to_grayscale(ds.images), 28, 28);
  for (auto& v : out.images.data()) v = std::clamp(v, 0.0f, 1.0f);
  out.lineage.push_back("preprocess_digits(28x28x1)");
  return out;
}

}  // namespace metainput
