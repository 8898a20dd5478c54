#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "metainput/dataset.hpp"
#include "metainput/errors.hpp"

// IDX files as used by the MNIST family: big-endian 32-bit magic and
// dimensions followed by unsigned bytes. Rank-3 image files
// (magic 0x00000803) are read as single-channel; rank-4 files
// (0x00000804) carry a trailing channel axis.
namespace metainput::idx {

inline constexpr std::uint32_t kImagesMagic = 0x00000803;
inline constexpr std::uint32_t kImagesRgbMagic = 0x00000804;
inline constexpr std::uint32_t kLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("idx: cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                               const std::string& file) {
  if (offset + 4 > bytes.size()) throw FormatError("idx: '" + file + "' truncated header", offset);
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("idx: cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IngestionError("idx: short write to '" + path.string() + "'");
}

}  // namespace detail

inline Tensor read_images(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string file = path.string();
  const std::uint32_t magic = detail::read_be32(bytes, 0, file);
  if (magic != kImagesMagic && magic != kImagesRgbMagic) {
    throw FormatError("idx: '" + file + "' has image magic " + hex64(magic) +
                          ", expected 0x00000803 or 0x00000804",
                      0);
  }
  const std::size_t rank = magic == kImagesMagic ? 3 : 4;
  Shape shape;
  for (std::size_t d = 0; d < rank; ++d) shape.push_back(detail::read_be32(bytes, 4 + 4 * d, file));
  if (rank == 3) shape.push_back(1);
  for (auto e : shape) {
    if (e == 0) throw FormatError("idx: '" + file + "' has a zero dimension", 4);
  }
  const std::size_t header = 4 + 4 * rank;
  const std::size_t count = shape_size(shape);
  if (bytes.size() < header + count) {
    throw FormatError("idx: '" + file + "' truncated pixel data, expected " +
                          std::to_string(count) + " bytes",
                      bytes.size());
  }
  if (bytes.size() > header + count) {
    throw FormatError("idx: '" + file + "' has trailing bytes", header + count);
  }
  Tensor images(shape);
  auto d = images.data();
  for (std::size_t i = 0; i < count; ++i) d[i] = static_cast<float>(bytes[header + i]) / 255.0f;
  return images;
}

inline Labels read_labels(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string file = path.string();
  const std::uint32_t magic = detail::read_be32(bytes, 0, file);
  if (magic != kLabelsMagic) {
    throw FormatError("idx: '" + file + "' has label magic " + hex64(magic) +
                          ", expected 0x00000801",
                      0);
  }
  const std::size_t count = detail::read_be32(bytes, 4, file);
  if (bytes.size() != 8 + count) {
    throw FormatError("idx: '" + file + "' declares " + std::to_string(count) +
                          " labels but holds " + std::to_string(bytes.size() - 8),
                      std::min(bytes.size(), 8 + count));
  }
  return Labels(bytes.begin() + 8, bytes.end());
}

/// Loads an image file and, optionally, its label file.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path = {}) {
  Dataset ds;
  ds.images = read_images(images_path);
  ds.name = images_path.filename().string();
  ds.lineage.push_back("load_idx(" + images_path.filename().string() + ")");
  if (!labels_path.empty()) {
    ds.labels = read_labels(labels_path);
    if (ds.labels->size() != ds.size()) {
      throw ConsistencyError("idx: " + std::to_string(ds.size()) + " images in '" +
                             images_path.string() + "' but " +
                             std::to_string(ds.labels->size()) + " labels in '" +
                             labels_path.string() + "'");
    }
  }
  return ds;
}

/// Pixels are quantized to bytes as round(255·x); values must lie in [0,1].
inline void write_images(const Tensor& images, const std::filesystem::path& path) {
  if (images.rank() != 4) throw ShapeError("idx: images must be N×H×W×C, got " + shape_str(images.shape()));
  std::vector<unsigned char> out;
  const bool gray = images.dim(3) == 1;
  detail::put_be32(out, gray ? kImagesMagic : kImagesRgbMagic);
  for (std::size_t d = 0; d < (gray ? 3u : 4u); ++d) {
    detail::put_be32(out, static_cast<std::uint32_t>(images.dim(d)));
  }
  out.reserve(out.size() + images.size());
  for (float v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw RangeError("idx: pixel value " + std::to_string(v) + " outside [0,1]");
    }
    out.push_back(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  detail::write_file(path, out);
}

inline void write_labels(const Labels& labels, const std::filesystem::path& path) {
  std::vector<unsigned char> out;
  detail::put_be32(out, kLabelsMagic);
  detail::put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (auto y : labels) {
    if (y < 0 || y > 255) throw RangeError("idx: label " + std::to_string(y) + " does not fit a byte");
    out.push_back(static_cast<unsigned char>(y));
  }
  detail::write_file(path, out);
}

inline void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path = {}) {
  write_images(ds.images, images_path);
  if (!labels_path.empty()) {
    if (!ds.labels) throw ContractError("idx: dataset '" + ds.name + "' has no labels to write");
    write_labels(*ds.labels, labels_path);
  }
}

// Rounds every pixel to the nearest multiple of 1/255, the precision an IDX
// round trip preserves.
inline Tensor quantize(const Tensor& images) {
  Tensor out = images;
  for (auto& v : out.data()) v = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
  return out;
}

}  // namespace metainput::idx
