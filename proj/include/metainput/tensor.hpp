#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metainput/errors.hpp"

namespace metainput {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline ShapeError shape_mismatch(const std::string& op, const Shape& a,
                                 const Shape& b) {
  return ShapeError(op + ": shape mismatch " + shape_str(a) + " vs " +
                    shape_str(b));
}

/// Dense row-major single-precision array with an optional gradient slot.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("Tensor: " + std::to_string(data_.size()) +
                       " values do not fill shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  std::span<float> grad() { return grad_.value(); }
  std::span<const float> grad() const { return grad_.value(); }

  // Allocates a zeroed gradient buffer if none exists.
  std::vector<float>& ensure_grad() {
    if (!grad_) grad_.emplace(data_.size(), 0.0f);
    return *grad_;
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
  }
  void clear_grad() noexcept { grad_.reset(); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw shape_mismatch("reshape", shape_, shape);
    }
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(),
                       [](float v) { return std::isfinite(v); });
  }

  // Same shape and same bytes. Gradient state is ignored.
  friend bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept {
    return a.shape_ == b.shape_ &&
           (a.data_.empty() ||
            std::memcmp(a.data_.data(), b.data_.data(),
                        a.data_.size() * sizeof(float)) == 0);
  }

 private:
  void check_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw ShapeError("Tensor: zero extent in " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<float> data_;
  std::optional<std::vector<float>> grad_;
  bool requires_grad_ = false;
};

}  // namespace metainput
