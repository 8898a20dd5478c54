#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metainput/checksum.hpp"
#include "metainput/errors.hpp"
#include "metainput/tensor.hpp"

namespace metainput {

using Labels = std::vector<std::int32_t>;

/// Image extent without the batch axis.
struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  Shape dims() const { return {height, width, channels}; }
  std::size_t size() const noexcept { return height * width * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

inline std::string to_string(const ImageShape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" +
         std::to_string(s.channels);
}

/// A batch of N×H×W×C images in [0,1] with optional labels.
struct Dataset {
  Tensor images;
  std::optional<Labels> labels;
  std::string name;
  // One human-readable record per transform, oldest first.
  std::vector<std::string> lineage;

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
  bool labeled() const noexcept { return labels.has_value(); }

  ImageShape image_shape() const {
    if (images.rank() != 4) return {};
    return {images.dim(1), images.dim(2), images.dim(3)};
  }

  const float* image(std::size_t i) const {
    return images.data().data() + i * image_shape().size();
  }

  // Rows `indices`, in the given order. Lineage is copied, not extended.
  Dataset select(const std::vector<std::size_t>& indices) const {
    const std::size_t stride = image_shape().size();
    if (indices.empty()) throw RangeError("select: empty index set on dataset '" + name + "'");
    Dataset out;
    Shape shape = images.shape();
    shape[0] = indices.size();
    out.images = Tensor(shape);
    auto dst = out.images.data();
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] >= size()) {
        throw RangeError("select: index " + std::to_string(indices[r]) + " out of range");
      }
      std::copy(image(indices[r]), image(indices[r]) + stride, dst.begin() + r * stride);
    }
    if (labels) {
      out.labels.emplace();
      out.labels->reserve(indices.size());
      for (auto i : indices) out.labels->push_back((*labels)[i]);
    }
    out.name = name;
    out.lineage = lineage;
    return out;
  }

  Dataset slice(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    return select(idx);
  }

  Dataset without_labels() const {
    Dataset out = *this;
    out.labels.reset();
    return out;
  }

  // Checksum over pixels and labels.
  std::uint64_t checksum() const {
    Fnv1a h;
    for (auto e : images.shape()) h.update_u64(e);
    h.update(images.data());
    if (labels) h.update(labels->data(), labels->size() * sizeof(std::int32_t));
    return h.digest();
  }
};

inline void validate_dataset(const Dataset& ds, std::size_t num_classes = 0) {
  if (ds.images.rank() != 4) {
    throw ShapeError("dataset '" + ds.name + "': images must be N×H×W×C, got " +
                     shape_str(ds.images.shape()));
  }
  for (float v : ds.images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw RangeError("dataset '" + ds.name + "': pixel value " + std::to_string(v) +
                       " outside [0,1]");
    }
  }
  if (ds.labels) {
    if (ds.labels->size() != ds.size()) {
      throw ConsistencyError("dataset '" + ds.name + "': " + std::to_string(ds.size()) +
                             " images but " + std::to_string(ds.labels->size()) + " labels");
    }
    for (auto y : *ds.labels) {
      if (y < 0 || (num_classes && static_cast<std::size_t>(y) >= num_classes)) {
        throw RangeError("dataset '" + ds.name + "': label " + std::to_string(y) +
                         " out of range");
      }
    }
  }
}

inline std::size_t count_classes(const Labels& labels) {
  std::int32_t mx = -1;
  for (auto y : labels) mx = std::max(mx, y);
  return static_cast<std::size_t>(mx + 1);
}

}  // namespace metainput
