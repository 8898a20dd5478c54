#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "metainput/checksum.hpp"
#include "metainput/dataset.hpp"
#include "metainput/graph.hpp"
#include "metainput/ops.hpp"
#include "metainput/random.hpp"

namespace metainput {

/// conv(out_channels, kernel×kernel, stride, "same" padding of kernel/2),
/// then optional batchnorm, ReLU, then optional 2×2 max-pool.
struct ConvBlockSpec {
  std::size_t out_channels = 32;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool batchnorm = true;
  bool maxpool = true;

  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

/// dense_dims lists the input width of each hidden dense layer: the first
/// entry must equal the flattened conv output, each later entry is the
/// width of the preceding hidden layer, and a final dense layer maps the
/// last entry to num_classes.
struct ModelSpec {
  ImageShape input_shape{28, 28, 1};
  std::vector<ConvBlockSpec> conv_blocks;
  std::vector<std::size_t> dense_dims;
  std::size_t num_classes = 10;

  static ModelSpec default_digits() {
    ModelSpec s;
    s.conv_blocks.assign(3, ConvBlockSpec{});
    s.dense_dims = {288, 128};
    return s;
  }

  struct Spatial {
    std::size_t h, w, c;
  };

  // Shape after each conv block; throws ValidationError naming the layer.
  std::vector<Spatial> trace() const {
    if (input_shape.height == 0 || input_shape.width == 0 || input_shape.channels == 0) {
      throw ValidationError("model spec: input shape " + to_string(input_shape) + " has a zero extent");
    }
    std::vector<Spatial> out;
    Spatial s{input_shape.height, input_shape.width, input_shape.channels};
    for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
      const auto& b = conv_blocks[i];
      const std::string layer = "conv" + std::to_string(i);
      if (b.out_channels == 0 || b.kernel == 0 || b.stride == 0) {
        throw ValidationError("model spec: " + layer + " needs positive channels, kernel and stride");
      }
      const std::size_t pad = b.kernel / 2;
      if (s.h + 2 * pad < b.kernel || s.w + 2 * pad < b.kernel) {
        throw ValidationError("model spec: " + layer + " kernel " + std::to_string(b.kernel) +
                              " exceeds padded input " + std::to_string(s.h) + "x" + std::to_string(s.w));
      }
      s.h = (s.h + 2 * pad - b.kernel) / b.stride + 1;
      s.w = (s.w + 2 * pad - b.kernel) / b.stride + 1;
      s.c = b.out_channels;
      if (b.maxpool) {
        if (s.h < 2 || s.w < 2) {
          throw ValidationError("model spec: " + layer + " output " + std::to_string(s.h) + "x" +
                                std::to_string(s.w) + " is too small to pool");
        }
        s.h = (s.h - 2) / 2 + 1;
        s.w = (s.w - 2) / 2 + 1;
      }
      out.push_back(s);
    }
    return out;
  }

  std::size_t flatten_dim() const {
    const auto t = trace();
    if (t.empty()) return input_shape.size();
    return t.back().h * t.back().w * t.back().c;
  }

  void validate() const {
    if (num_classes < 2) {
      throw ValidationError("model spec: num_classes must be at least 2, got " + std::to_string(num_classes));
    }
    const std::size_t flat = flatten_dim();
    if (dense_dims.empty()) {
      throw ValidationError("model spec: dense_dims must list at least the flattened input width " +
                            std::to_string(flat));
    }
    if (dense_dims[0] != flat) {
      throw ValidationError("model spec: dense0 expects input width " + std::to_string(dense_dims[0]) +
                            " but the conv stack flattens to " + std::to_string(flat));
    }
    for (std::size_t j = 0; j < dense_dims.size(); ++j) {
      if (dense_dims[j] == 0) throw ValidationError("model spec: dense" + std::to_string(j) + " has zero width");
    }
  }

  std::size_t dense_layers() const { return dense_dims.size(); }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Parameters and batchnorm running statistics. Param names:
/// conv{i}.weight [k,k,Cin,Cout], conv{i}.bias (blocks without batchnorm),
/// bn{i}.gamma, bn{i}.beta, dense{j}.weight [in,out], dense{j}.bias.
struct Model {
  ModelSpec spec;
  std::vector<NamedTensor> params;
  std::vector<BatchNormStats> bn_stats;  // one per batchnorm block, in order
  bool frozen = false;

  Tensor& param(const std::string& name) {
    for (auto& p : params)
      if (p.name == name) return p.value;
    throw ContractError("model: no parameter named '" + name + "'");
  }
  const Tensor& param(const std::string& name) const { return const_cast<Model*>(this)->param(name); }

  std::vector<Tensor*> param_ptrs() {
    std::vector<Tensor*> out;
    for (auto& p : params) out.push_back(&p.value);
    return out;
  }

  bool has_batchnorm() const { return !bn_stats.empty(); }
};

inline std::uint64_t params_checksum(const Model& m) {
  Fnv1a h;
  for (const auto& p : m.params) {
    h.update(p.name);
    h.update(p.value.data());
  }
  return h.digest();
}

inline std::uint64_t bn_checksum(const Model& m) {
  Fnv1a h;
  for (const auto& s : m.bn_stats) {
    h.update(s.mean.data());
    h.update(s.var.data());
  }
  return h.digest();
}

namespace detail {

// He-uniform: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
inline Tensor he_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * limit);
  return t;
}

}  // namespace detail

inline Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = spec;
  Rng rng(seed);
  std::size_t cin = spec.input_shape.channels;
  for (std::size_t i = 0; i < spec.conv_blocks.size(); ++i) {
    const auto& b = spec.conv_blocks[i];
    const std::string p = std::to_string(i);
    m.params.push_back({"conv" + p + ".weight",
                        detail::he_uniform({b.kernel, b.kernel, cin, b.out_channels}, b.kernel * b.kernel * cin, rng)});
    if (b.batchnorm) {
      m.params.push_back({"bn" + p + ".gamma", Tensor({b.out_channels}, 1.0f)});
      m.params.push_back({"bn" + p + ".beta", Tensor({b.out_channels}, 0.0f)});
      m.bn_stats.push_back({Tensor({b.out_channels}, 0.0f), Tensor({b.out_channels}, 1.0f)});
    } else {
      m.params.push_back({"conv" + p + ".bias", Tensor({b.out_channels}, 0.0f)});
    }
    cin = b.out_channels;
  }
  for (std::size_t j = 0; j < spec.dense_dims.size(); ++j) {
    const std::size_t in = spec.dense_dims[j];
    const std::size_t out = j + 1 < spec.dense_dims.size() ? spec.dense_dims[j + 1] : spec.num_classes;
    const std::string p = std::to_string(j);
    m.params.push_back({"dense" + p + ".weight", detail::he_uniform({in, out}, in, rng)});
    m.params.push_back({"dense" + p + ".bias", Tensor({out}, 0.0f)});
  }
  return m;
}

enum class ForwardMode {
  kTrain,      // params receive gradients; batchnorm uses batch statistics
  kInference,  // params are constants; batchnorm uses stored statistics
};

/// Called with (batchnorm index, pre-normalization activations).
using BatchNormProbe = std::function<void(std::size_t, const Tensor&)>;

namespace detail {

inline void check_input(const ModelSpec& spec, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != spec.input_shape.height || x.dim(2) != spec.input_shape.width ||
      x.dim(3) != spec.input_shape.channels) {
    throw ShapeError("model forward: expected N×" + to_string(spec.input_shape) + " input, got " +
                     shape_str(x.shape()));
  }
}

// Runs the network on `x`. In inference mode the stored statistics are only
// read. With a probe, evaluation stops once batchnorm `stop_at_bn` has
// reported its input.
inline Var forward_impl(Model& m, Graph& g, Var x, ForwardMode mode, const BatchNormProbe& probe,
                        std::size_t stop_at_bn) {
  check_input(m.spec, x.value());
  const bool train = mode == ForwardMode::kTrain;
  auto leaf = [&](const std::string& name) -> Var {
    Tensor& t = m.param(name);
    return train ? g.param(t) : g.input(t);
  };
  BatchNormAttrs bn_attrs;
  bn_attrs.mode = train ? BatchNormMode::kTrain : BatchNormMode::kInference;
  Var h = x;
  std::size_t bn_index = 0;
  for (std::size_t i = 0; i < m.spec.conv_blocks.size(); ++i) {
    const auto& b = m.spec.conv_blocks[i];
    const std::string p = std::to_string(i);
    h = conv2d(h, leaf("conv" + p + ".weight"), {b.stride, b.kernel / 2});
    if (b.batchnorm) {
      if (probe) {
        probe(bn_index, h.value());
        if (bn_index == stop_at_bn) return h;
      }
      h = batchnorm(h, leaf("bn" + p + ".gamma"), leaf("bn" + p + ".beta"), m.bn_stats[bn_index], bn_attrs);
      ++bn_index;
    } else {
      h = add(h, leaf("conv" + p + ".bias"));
    }
    h = relu(h);
    if (b.maxpool) h = maxpool2d(h);
  }
  h = flatten(h);
  for (std::size_t j = 0; j < m.spec.dense_dims.size(); ++j) {
    const std::string p = std::to_string(j);
    h = add(matmul(h, leaf("dense" + p + ".weight")), leaf("dense" + p + ".bias"));
    if (j + 1 < m.spec.dense_dims.size()) h = relu(h);
  }
  return h;
}

}  // namespace detail

/// Training forward: gradients flow to every parameter and batchnorm
/// running statistics are updated.
inline Var forward_train(Model& m, Graph& g, Var x) {
  if (m.frozen) throw ContractError("model forward: a frozen model cannot run in training mode");
  return detail::forward_impl(m, g, x, ForwardMode::kTrain, {}, 0);
}

/// Inference forward returning logits; parameters and statistics are read
/// only, so gradients can still flow to `x` (and to anything upstream).
inline Var forward_inference(const Model& m, Graph& g, Var x) {
  return detail::forward_impl(const_cast<Model&>(m), g, x, ForwardMode::kInference, {}, 0);
}

/// Inference-mode activations entering batchnorm layer `bn_index`.
inline Tensor batchnorm_input(const Model& m, const Tensor& x, std::size_t bn_index) {
  if (bn_index >= m.bn_stats.size()) throw CapabilityError("model: no batchnorm layer " + std::to_string(bn_index));
  Graph g;
  Tensor captured;
  detail::forward_impl(const_cast<Model&>(m), g, g.input(x), ForwardMode::kInference,
                       [&](std::size_t k, const Tensor& t) {
                         if (k == bn_index) captured = t;
                       },
                       bn_index);
  return captured;
}

inline constexpr std::size_t kPredictChunk = 256;

/// Class logits for every image, evaluated in chunks without gradients.
inline Tensor predict_logits(const Model& m, const Dataset& ds) {
  detail::check_input(m.spec, ds.images);
  const std::size_t n = ds.size(), k = m.spec.num_classes;
  Tensor out({n, k});
  for (std::size_t begin = 0; begin < n; begin += kPredictChunk) {
    const std::size_t end = std::min(n, begin + kPredictChunk);
    const Dataset chunk = ds.slice(begin, end);
    Graph g;
    const Tensor& logits = forward_inference(m, g, g.input(chunk.images)).value();
    std::copy(logits.data().begin(), logits.data().end(), out.data().begin() + begin * k);
  }
  return out;
}

/// Softmax class probabilities (N × num_classes), batchnorm in inference mode.
inline Tensor predict(const Model& m, const Dataset& ds) { return softmax_rows(predict_logits(m, ds)); }

/// Row-wise argmax, ties to the lowest index.
inline std::vector<std::int32_t> argmax_rows(const Tensor& scores) {
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::vector<std::int32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (scores[i * k + j] > scores[i * k + best]) best = j;
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

}  // namespace metainput
