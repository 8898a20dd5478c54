#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "metainput/errors.hpp"
#include "metainput/tensor.hpp"

namespace metainput {

struct AdamOptions {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Moments and step count for one parameter tensor.
struct AdamSlot {
  std::vector<float> m;
  std::vector<float> v;
  long long step = 0;
};

/// Bias-corrected Adam. A parameter whose gradient is entirely zero is left
/// untouched, moments included.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {
    if (!(options_.lr > 0.0f)) throw ContractError("adam: lr must be positive");
    if (!(options_.beta1 > 0.0f && options_.beta1 < 1.0f) ||
        !(options_.beta2 > 0.0f && options_.beta2 < 1.0f)) {
      throw ContractError("adam: betas must lie in (0,1)");
    }
    if (!(options_.eps > 0.0f)) throw ContractError("adam: eps must be positive");
  }

  const AdamOptions& options() const noexcept { return options_; }
  const std::vector<AdamSlot>& slots() const noexcept { return slots_; }

  void step(const std::vector<Tensor*>& params) {
    if (slots_.empty()) {
      slots_.resize(params.size());
    } else if (slots_.size() != params.size()) {
      throw ContractError("adam: optimizer state holds " + std::to_string(slots_.size()) +
                          " slots but " + std::to_string(params.size()) + " params were given");
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
      if (!params[p]->has_grad()) {
        throw ContractError("adam: param " + std::to_string(p) + " of shape " +
                            shape_str(params[p]->shape()) + " has no gradient");
      }
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& param = *params[p];
      AdamSlot& slot = slots_[p];
      if (slot.m.empty()) {
        slot.m.assign(param.size(), 0.0f);
        slot.v.assign(param.size(), 0.0f);
      } else if (slot.m.size() != param.size()) {
        throw ContractError("adam: state shape does not match param " + std::to_string(p));
      }
      auto grad = param.grad();
      if (std::all_of(grad.begin(), grad.end(), [](float g) { return g == 0.0f; })) continue;
      ++slot.step;
      const double bc1 = 1.0 - std::pow(static_cast<double>(options_.beta1), slot.step);
      const double bc2 = 1.0 - std::pow(static_cast<double>(options_.beta2), slot.step);
      const float b1 = options_.beta1, b2 = options_.beta2;
      auto data = param.data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const float g = grad[i];
        slot.m[i] = b1 * slot.m[i] + (1.0f - b1) * g;
        slot.v[i] = b2 * slot.v[i] + (1.0f - b2) * g * g;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        data[i] -= static_cast<float>(options_.lr * mhat / (std::sqrt(vhat) + options_.eps));
      }
    }
    for (Tensor* param : params) param->zero_grad();
  }

 private:
  AdamOptions options_;
  std::vector<AdamSlot> slots_;
};

}  // namespace metainput
