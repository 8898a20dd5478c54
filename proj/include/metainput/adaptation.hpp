#pragma once

#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "metainput/checkpoint.hpp"
#include "metainput/model.hpp"
#include "metainput/optim.hpp"
#include "metainput/training.hpp"

namespace metainput {

struct AdaptConfig {
  float lr = 1e-2f;
  std::size_t epochs = 30;
  // When set, the exact number of optimizer steps; overrides epochs.
  std::optional<std::size_t> steps;
  std::size_t batch_size = 64;
  double alpha = 0.9;
  bool clamp_transformed = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0f && std::isfinite(lr))) throw ValidationError("adapt config: lr must be positive");
    if (batch_size == 0) throw ValidationError("adapt config: batch_size must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw ValidationError("adapt config: alpha must lie strictly between 0 and 1, got " + std::to_string(alpha));
    }
  }
};

/// Where a meta input came from.
struct Provenance {
  std::string dataset;
  double ratio = 1.0;
  bool supervised = true;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  double selection_fraction = 1.0;  // share of the pool that was pseudo-labeled

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// One universal H×W×C offset added to every target image.
struct MetaInput {
  Tensor w;
  Provenance trained_on;
  std::size_t steps = 0;
  bool clamp = false;
  std::vector<double> epoch_loss;
};

inline MetaInput zero_meta_input(const ModelSpec& spec) {
  MetaInput mi;
  mi.w = Tensor(spec.input_shape.dims(), 0.0f);
  return mi;
}

/// x + w for every image, clamped to [0,1] when asked.
inline Dataset apply_meta_input(const Dataset& batch, const MetaInput& mi, bool clamp) {
  if (batch.images.rank() != 4 || batch.image_shape().dims() != mi.w.shape()) {
    throw shape_mismatch("apply_meta_input", batch.images.shape(), mi.w.shape());
  }
  Dataset out = batch;
  auto d = out.images.data();
  const auto w = mi.w.data();
  const std::size_t stride = w.size();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const float v = d[i] + w[i % stride];
    d[i] = clamp ? std::clamp(v, 0.0f, 1.0f) : v;
  }
  out.lineage.push_back(std::string("apply_meta_input(") + hex64(checksum(mi.w)) + (clamp ? ", clamp)" : ")"));
  return out;
}

namespace detail {

struct FrozenGuard {
  const Model& model;
  std::uint64_t params, stats;
  explicit FrozenGuard(const Model& m) : model(m), params(params_checksum(m)), stats(bn_checksum(m)) {}
  void verify(const char* op) const {
    if (params_checksum(model) != params || bn_checksum(model) != stats) {
      throw ConsistencyError(std::string(op) + ": frozen model state changed during adaptation");
    }
  }
};

inline void require_frozen(const Model& m, const char* op) {
  if (!m.frozen) {
    throw ContractError(std::string(op) + ": model is not frozen; adaptation never modifies model weights, "
                        "so it requires a frozen pretrained model");
  }
}

}  // namespace detail

/// Optimizes W over the labeled target with model weights held fixed.
/// Only W receives gradients; batchnorm runs on stored statistics.
inline MetaInput optimize_meta_input(const Model& model, const Dataset& target, const AdaptConfig& cfg) {
  detail::require_frozen(model, "optimize_meta_input");
  if (!target.labeled()) throw ContractError("optimize_meta_input: target '" + target.name + "' has no labels");
  cfg.validate();
  validate_dataset(target, model.spec.num_classes);
  detail::check_input(model.spec, target.images);
  const detail::FrozenGuard guard(model);

  MetaInput mi = zero_meta_input(model.spec);
  mi.clamp = cfg.clamp_transformed;
  mi.trained_on = {target.name, 1.0, true, cfg.seed, target.size(), 1.0};
  mi.w.set_requires_grad(true);
  Adam adam(AdamOptions{cfg.lr});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(target.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batches_per_epoch = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.steps ? *cfg.steps : cfg.epochs * batches_per_epoch;

  std::size_t step = 0;
  while (step < total_steps) {
    shuffle_in_place(order, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size() && step < total_steps; begin += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const Tensor x = detail::gather_images(target, order, begin, end);
      const auto y = detail::gather_labels(*target.labels, order, begin, end);
      Graph g;
      Var h = add(g.input(x), g.param(mi.w));
      if (cfg.clamp_transformed) h = clamp01(h);
      Var loss = softmax_cross_entropy(forward_inference(model, g, h), y);
      g.backward(loss);
      adam.step({&mi.w});
      total += loss.value()[0];
      ++batches;
    }
    mi.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  mi.steps = step;
  mi.w.set_requires_grad(false);
  mi.w.clear_grad();
  guard.verify("optimize_meta_input");
  return mi;
}

/// Samples whose max class probability exceeds alpha, with their argmax.
struct PseudoLabelSet {
  std::vector<std::size_t> indices;
  Labels labels;
  std::vector<float> confidences;
  double alpha = 0.9;
  std::size_t pool_size = 0;
  bool empty_warning = false;

  double selection_fraction() const {
    return pool_size ? static_cast<double>(indices.size()) / static_cast<double>(pool_size) : 0.0;
  }
};

/// Selection over precomputed probabilities (N × classes).
inline PseudoLabelSet select_confident(const Tensor& probs, double alpha) {
  if (probs.rank() != 2) throw ShapeError("pseudo_label: expected N×classes probabilities, got " + shape_str(probs.shape()));
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ValidationError("pseudo_label: alpha must lie strictly between 0 and 1, got " + std::to_string(alpha));
  }
  PseudoLabelSet set;
  set.alpha = alpha;
  set.pool_size = probs.dim(0);
  const std::size_t k = probs.dim(1);
  const auto best = argmax_rows(probs);
  for (std::size_t i = 0; i < probs.dim(0); ++i) {
    const float p = probs[i * k + static_cast<std::size_t>(best[i])];
    if (static_cast<double>(p) > alpha) {
      set.indices.push_back(i);
      set.labels.push_back(best[i]);
      set.confidences.push_back(p);
    }
  }
  set.empty_warning = set.indices.empty();
  return set;
}

inline PseudoLabelSet pseudo_label(const Model& model, const Dataset& unlabeled, double alpha) {
  detail::require_frozen(model, "pseudo_label");
  return select_confident(predict(model, unlabeled), alpha);
}

struct UnsupervisedResult {
  MetaInput meta;
  PseudoLabelSet pseudo;
};

/// One round of pseudo labeling, then supervised optimization on the
/// confident subset.
inline UnsupervisedResult optimize_meta_input_unsupervised(const Model& model, const Dataset& unlabeled,
                                                           const AdaptConfig& cfg) {
  detail::require_frozen(model, "optimize_meta_input_unsupervised");
  cfg.validate();
  UnsupervisedResult r;
  r.pseudo = pseudo_label(model, unlabeled, cfg.alpha);
  if (r.pseudo.indices.empty()) {
    std::ostringstream os;
    os << "optimize_meta_input_unsupervised: no confident samples: none of " << unlabeled.size()
       << " samples has max class probability above alpha = " << cfg.alpha << "; lower alpha";
    throw NoConfidentSamplesError(os.str());
  }
  Dataset subset = unlabeled.select(r.pseudo.indices);
  subset.labels = r.pseudo.labels;
  subset.lineage.push_back("pseudo_label(alpha=" + std::to_string(cfg.alpha) + ")");
  r.meta = optimize_meta_input(model, subset, cfg);
  r.meta.trained_on.supervised = false;
  r.meta.trained_on.dataset = unlabeled.name;
  r.meta.trained_on.selection_fraction = r.pseudo.selection_fraction();
  return r;
}

/// Recomputes every batchnorm layer's statistics from the target data,
/// layer by layer (later layers see earlier layers already re-normalized).
/// Variance is the unbiased population estimate. Parameters are copied
/// unchanged.
inline Model bn_adapt(const Model& model, const Dataset& target) {
  if (!model.has_batchnorm()) throw CapabilityError("bn_adapt: model has no batchnorm layers");
  detail::check_input(model.spec, target.images);
  Model out = model;
  for (std::size_t k = 0; k < out.bn_stats.size(); ++k) {
    const std::size_t c = out.bn_stats[k].mean.size();
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    std::size_t count = 0;
    // Shifted sums (shift = old mean) in one pass over the target.
    std::vector<double> shift(c);
    for (std::size_t ch = 0; ch < c; ++ch) shift[ch] = out.bn_stats[k].mean[ch];
    for (std::size_t begin = 0; begin < target.size(); begin += kPredictChunk) {
      const std::size_t end = std::min(target.size(), begin + kPredictChunk);
      const Tensor pre = batchnorm_input(out, target.slice(begin, end).images, k);
      const auto d = pre.data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double v = d[i] - shift[i % c];
        sum[i % c] += v;
        sq[i % c] += v * v;
      }
      count += d.size() / c;
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double mean = sum[ch] / static_cast<double>(count);
      const double var = count > 1 ? (sq[ch] - mean * sum[ch]) / static_cast<double>(count - 1) : 0.0;
      out.bn_stats[k].mean[ch] = static_cast<float>(shift[ch] + mean);
      out.bn_stats[k].var[ch] = static_cast<float>(std::max(var, 0.0));
    }
  }
  return out;
}

// Meta-input files use the checkpoint container with a "w" tensor.
inline constexpr std::string_view kMetaMagic = "MIMETA";

inline nlohmann::json provenance_to_json(const Provenance& p) {
  return {{"dataset", p.dataset},   {"ratio", p.ratio},     {"supervised", p.supervised},
          {"seed", p.seed},         {"samples", p.samples}, {"selection_fraction", p.selection_fraction}};
}

inline Provenance provenance_from_json(const nlohmann::json& j) {
  Provenance p;
  p.dataset = j.at("dataset").get<std::string>();
  p.ratio = j.at("ratio").get<double>();
  p.supervised = j.at("supervised").get<bool>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.samples = j.at("samples").get<std::size_t>();
  p.selection_fraction = j.at("selection_fraction").get<double>();
  return p;
}

inline std::vector<unsigned char> encode_meta_input(const MetaInput& mi) {
  container::Document doc;
  doc.header = {{"kind", "meta_input"},
                {"provenance", provenance_to_json(mi.trained_on)},
                {"steps", mi.steps},
                {"clamp", mi.clamp},
                {"epoch_loss", mi.epoch_loss}};
  doc.tensors.push_back({"w", mi.w});
  doc.tensors.back().value.clear_grad();
  return container::encode(kMetaMagic, doc);
}

inline MetaInput decode_meta_input(const std::vector<unsigned char>& bytes, const std::string& what = "meta input") {
  const container::Document doc = container::decode(kMetaMagic, bytes, what);
  if (doc.tensors.size() != 1 || doc.tensors[0].name != "w" || doc.tensors[0].value.rank() != 3) {
    throw FormatError(what + ": expected a single H×W×C tensor named 'w'", 20);
  }
  MetaInput mi;
  try {
    mi.trained_on = provenance_from_json(doc.header.at("provenance"));
    mi.steps = doc.header.at("steps").get<std::size_t>();
    mi.clamp = doc.header.at("clamp").get<bool>();
    mi.epoch_loss = doc.header.at("epoch_loss").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed header: " + e.what(), 20);
  }
  mi.w = doc.tensors[0].value;
  return mi;
}

inline void save_meta_input(const MetaInput& mi, const std::filesystem::path& path) {
  container::write_file(path, encode_meta_input(mi));
}

inline MetaInput load_meta_input(const std::filesystem::path& path) {
  return decode_meta_input(container::read_file(path), "meta input '" + path.string() + "'");
}

inline std::uint64_t meta_input_checksum(const MetaInput& mi) {
  Fnv1a h;
  h.update_u64(checksum(mi.w));
  h.update(provenance_to_json(mi.trained_on).dump());
  h.update_u64(mi.steps);
  h.update_u64(mi.clamp ? 1 : 0);
  return h.digest();
}

}  // namespace metainput
