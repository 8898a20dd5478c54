#pragma once

#include <numeric>
#include <vector>

#include "metainput/model.hpp"
#include "metainput/optim.hpp"

namespace metainput {

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Model model;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

namespace detail {

// Gathers rows `idx[begin, end)` of the dataset into a contiguous batch.
inline Tensor gather_images(const Dataset& ds, const std::vector<std::size_t>& idx, std::size_t begin,
                            std::size_t end) {
  const ImageShape s = ds.image_shape();
  Tensor out({end - begin, s.height, s.width, s.channels});
  const std::size_t stride = s.size();
  for (std::size_t i = begin; i < end; ++i) {
    std::copy(ds.image(idx[i]), ds.image(idx[i]) + stride, out.data().begin() + (i - begin) * stride);
  }
  return out;
}

inline std::vector<std::int32_t> gather_labels(const Labels& labels, const std::vector<std::size_t>& idx,
                                               std::size_t begin, std::size_t end) {
  std::vector<std::int32_t> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(labels[idx[i]]);
  return out;
}

}  // namespace detail

/// Minimizes mean cross-entropy over the labeled source with Adam. Returns
/// a copy with trained parameters and frozen = true; the input model is
/// left untouched.
inline TrainResult pretrain(const Model& initial, const Dataset& source, const TrainConfig& cfg) {
  if (initial.frozen) throw ContractError("pretrain: model is frozen; refusing to modify its parameters");
  if (!source.labeled()) throw ContractError("pretrain: source dataset '" + source.name + "' has no labels");
  if (cfg.batch_size == 0) throw ValidationError("pretrain: batch_size must be positive");
  validate_dataset(source, initial.spec.num_classes);
  detail::check_input(initial.spec, source.images);

  TrainResult result{initial, {}};
  Model& m = result.model;
  for (auto& p : m.params) p.value.set_requires_grad(true);
  Adam adam(AdamOptions{cfg.lr});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      // A single-sample batch has no batch variance to normalize with.
      if (end - begin < 2 && m.has_batchnorm() && begin > 0) break;
      const Tensor x = detail::gather_images(source, order, begin, end);
      const auto y = detail::gather_labels(*source.labels, order, begin, end);
      Graph g;
      Var loss = softmax_cross_entropy(forward_train(m, g, g.input(x)), y);
      g.backward(loss);
      adam.step(m.param_ptrs());
      total += loss.value()[0];
      ++batches;
    }
    result.epoch_loss.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }
  for (auto& p : m.params) {
    p.value.set_requires_grad(false);
    p.value.clear_grad();
  }
  m.frozen = true;
  return result;
}

}  // namespace metainput
