#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "metainput/dataset.hpp"
#include "metainput/random.hpp"

// Procedurally rendered handwritten-style digits. Each class is a fixed set
// of stroke polylines in a unit box; every sample draws a random affine
// warp and pen width and is rasterized with anti-aliasing. Used as the
// desk-scale stand-in for the MNIST-family benchmarks when no IDX files are
// available.
namespace metainput {

struct GlyphStyle {
  std::string name = "glyph-digits";
  std::size_t size = 28;
  float background = 0.0f;
  float foreground = 1.0f;
  float thickness_min = 1.6f;  // pixels
  float thickness_max = 3.0f;
  float rotation_deg = 12.0f;
  float scale_min = 0.80f;
  float scale_max = 1.05f;
  float shear = 0.15f;
  float translate_px = 2.0f;
  // Zero-mean uniform per-pixel jitter amplitude, applied before clamping.
  float texture = 0.0f;

  // White strokes on black, MNIST-like.
  static GlyphStyle classic() { return {}; }

  // Mid-gray strokes on a mid-gray background: every pixel stays inside
  // [0.3, 0.7], so brightness offsets up to ±0.3 never clamp.
  static GlyphStyle mid_range() {
    GlyphStyle s;
    s.name = "glyph-digits-midrange";
    s.background = 0.3f;
    s.foreground = 0.7f;
    return s;
  }
};

namespace detail {

struct Point {
  float x, y;
};
using Polyline = std::vector<Point>;

inline Polyline arc(float cx, float cy, float rx, float ry, float from_deg, float to_deg,
                    int segments = 14) {
  Polyline p;
  for (int i = 0; i <= segments; ++i) {
    const float t = (from_deg + (to_deg - from_deg) * static_cast<float>(i) / segments) *
                    3.14159265f / 180.0f;
    p.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return p;
}

// y grows downward; angles follow screen convention (270° is the top).
inline const std::array<std::vector<Polyline>, 10>& digit_strokes() {
  static const std::array<std::vector<Polyline>, 10> strokes = [] {
    std::array<std::vector<Polyline>, 10> s;
    s[0] = {arc(0.5f, 0.5f, 0.21f, 0.31f, 0.0f, 360.0f, 20)};
    s[1] = {{{0.52f, 0.18f}, {0.52f, 0.82f}}, {{0.38f, 0.31f}, {0.52f, 0.18f}}};
    {
      Polyline p = arc(0.5f, 0.36f, 0.2f, 0.18f, 190.0f, 385.0f);
      p.push_back({0.3f, 0.82f});
      p.push_back({0.72f, 0.82f});
      s[2] = {p};
    }
    s[3] = {arc(0.48f, 0.33f, 0.19f, 0.15f, 200.0f, 450.0f),
            arc(0.48f, 0.66f, 0.22f, 0.17f, 270.0f, 520.0f)};
    s[4] = {{{0.62f, 0.82f}, {0.62f, 0.18f}, {0.28f, 0.62f}, {0.76f, 0.62f}}};
    {
      Polyline p{{0.70f, 0.18f}, {0.36f, 0.18f}, {0.33f, 0.47f}};
      Polyline bowl = arc(0.5f, 0.63f, 0.2f, 0.19f, 215.0f, 495.0f);
      s[5] = {p, bowl};
    }
    s[6] = {{{0.68f, 0.2f}, {0.52f, 0.18f}, {0.38f, 0.28f}, {0.31f, 0.47f}, {0.31f, 0.64f}},
            arc(0.5f, 0.64f, 0.19f, 0.18f, 0.0f, 360.0f, 18)};
    s[7] = {{{0.28f, 0.18f}, {0.72f, 0.18f}, {0.44f, 0.82f}}};
    s[8] = {arc(0.5f, 0.32f, 0.16f, 0.14f, 0.0f, 360.0f, 16),
            arc(0.5f, 0.66f, 0.2f, 0.17f, 0.0f, 360.0f, 18)};
    s[9] = {arc(0.5f, 0.36f, 0.19f, 0.17f, 0.0f, 360.0f, 18), {{0.69f, 0.38f}, {0.6f, 0.82f}}};
    return s;
  }();
  return strokes;
}

inline float segment_distance(Point p, Point a, Point b) {
  const float vx = b.x - a.x, vy = b.y - a.y;
  const float wx = p.x - a.x, wy = p.y - a.y;
  const float len2 = vx * vx + vy * vy;
  float t = len2 > 0.0f ? (wx * vx + wy * vy) / len2 : 0.0f;
  t = std::clamp(t, 0.0f, 1.0f);
  const float dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

/// Renders `count` digits with balanced classes in shuffled order.
inline Dataset synth_glyph_digits(std::size_t count, const GlyphStyle& style, std::uint64_t seed) {
  if (count == 0) throw RangeError("synth_glyph_digits: count must be positive");
  if (style.size < 8) throw ValidationError("synth_glyph_digits: image size must be at least 8");
  const std::size_t side = style.size;
  Rng rng(seed);
  Labels labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<std::int32_t>(i % 10);
  shuffle_in_place(labels, rng);

  Dataset ds;
  ds.images = Tensor({count, side, side, 1});
  auto uni = [&](float lo, float hi) { return lo + (hi - lo) * static_cast<float>(uniform01(rng)); };
  const auto& strokes = detail::digit_strokes();
  const float px = static_cast<float>(side);

  for (std::size_t i = 0; i < count; ++i) {
    const float angle = uni(-style.rotation_deg, style.rotation_deg) * 3.14159265f / 180.0f;
    const float scale = uni(style.scale_min, style.scale_max);
    const float sx = scale * uni(0.9f, 1.1f), sy = scale;
    const float shear = uni(-style.shear, style.shear);
    const float tx = uni(-style.translate_px, style.translate_px);
    const float ty = uni(-style.translate_px, style.translate_px);
    const float pen = uni(style.thickness_min, style.thickness_max);
    const float ca = std::cos(angle), sa = std::sin(angle);

    // Unit-box stroke points to pixel coordinates.
    std::vector<std::vector<detail::Point>> lines;
    for (const auto& line : strokes[labels[i]]) {
      std::vector<detail::Point> pts;
      for (auto p : line) {
        float x = (p.x - 0.5f) * sx + shear * (p.y - 0.5f);
        float y = (p.y - 0.5f) * sy;
        const float rx = ca * x - sa * y, ry = sa * x + ca * y;
        pts.push_back({rx * px + px / 2.0f + tx, ry * px + px / 2.0f + ty});
      }
      lines.push_back(std::move(pts));
    }

    float* img = ds.images.data().data() + i * side * side;
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const detail::Point p{static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f};
        float d = 1e9f;
        for (const auto& line : lines)
          for (std::size_t k = 0; k + 1 < line.size(); ++k)
            d = std::min(d, detail::segment_distance(p, line[k], line[k + 1]));
        const float ink = std::clamp(pen / 2.0f - d + 0.5f, 0.0f, 1.0f);
        float v = style.background + (style.foreground - style.background) * ink;
        if (style.texture > 0.0f) v += uni(-style.texture, style.texture);
        img[y * side + x] = std::clamp(v, 0.0f, 1.0f);
      }
  }
  ds.labels = std::move(labels);
  ds.name = style.name;
  std::ostringstream record;
  record << "synth_glyph_digits(style=" << style.name << ", count=" << count << ", seed=" << seed << ")";
  ds.lineage.push_back(record.str());
  return ds;
}

}  // namespace metainput
