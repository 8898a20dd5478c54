#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <variant>
#include <vector>

#include "metainput/dataset.hpp"
#include "metainput/random.hpp"

namespace metainput {

/// Draws floor(ratio·N) samples, stratified by label when labels exist.
/// Per-class counts follow largest-remainder apportionment; when
/// ratio·N >= number of classes every class keeps at least one sample.
/// Selected rows keep their original relative order.
inline Dataset subsample(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw RangeError("subsample: ratio must be in (0,1], got " + std::to_string(ratio));
  }
  const std::size_t n = ds.size();
  const double wanted = ratio * static_cast<double>(n);
  // Guard against 0.3 * 1000 = 299.99999999999994.
  const auto total = static_cast<std::size_t>(std::floor(wanted + 1e-9));
  if (total == 0) {
    throw RangeError("subsample: ratio " + std::to_string(ratio) + " of " + std::to_string(n) +
                     " samples selects nothing");
  }
  if (total == n) {
    Dataset out = ds;
    out.lineage.push_back("subsample(ratio=1)");
    return out;
  }

  Rng rng(seed);
  std::vector<std::size_t> chosen;
  if (ds.labels) {
    std::map<std::int32_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[(*ds.labels)[i]].push_back(i);
    struct Share {
      std::int32_t label;
      std::size_t take;
      double remainder;
    };
    std::vector<Share> shares;
    std::size_t assigned = 0;
    for (const auto& [label, members] : by_class) {
      const double exact = ratio * static_cast<double>(members.size());
      const auto base = static_cast<std::size_t>(std::floor(exact + 1e-9));
      shares.push_back({label, base, exact - static_cast<double>(base)});
      assigned += base;
    }
    std::vector<std::size_t> order(shares.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return shares[a].remainder > shares[b].remainder;
    });
    for (std::size_t k = 0; assigned < total && k < order.size(); ++k, ++assigned) {
      ++shares[order[k]].take;
    }
    if (wanted >= static_cast<double>(shares.size())) {
      for (auto& s : shares) s.take = std::max<std::size_t>(s.take, 1);
    }
    for (const auto& s : shares) {
      auto members = by_class[s.label];
      shuffle_in_place(members, rng);
      chosen.insert(chosen.end(), members.begin(), members.begin() + std::min(s.take, members.size()));
    }
  } else {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    shuffle_in_place(all, rng);
    chosen.assign(all.begin(), all.begin() + total);
  }
  std::sort(chosen.begin(), chosen.end());
  Dataset out = ds.select(chosen);
  std::ostringstream record;
  record << "subsample(ratio=" << ratio << ", seed=" << seed << ", n=" << chosen.size() << ")";
  out.lineage.push_back(record.str());
  return out;
}

/// Either a scalar brightness offset or an H×W×C offset image.
using Shift = std::variant<float, Tensor>;

/// clamp(x + shift) per image.
inline Dataset synth_shift(const Dataset& ds, const Shift& shift) {
  Dataset out = ds;
  auto d = out.images.data();
  std::ostringstream record;
  if (const float* c = std::get_if<float>(&shift)) {
    for (auto& v : d) v = std::clamp(v + *c, 0.0f, 1.0f);
    record << "synth_shift(" << *c << ")";
  } else {
    const Tensor& t = std::get<Tensor>(shift);
    if (t.shape() != ds.image_shape().dims()) {
      throw shape_mismatch("synth_shift", ds.image_shape().dims(), t.shape());
    }
    const std::size_t stride = t.size();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::clamp(d[i] + t[i % stride], 0.0f, 1.0f);
    record << "synth_shift(tensor " << hex64(checksum(t)) << ")";
  }
  out.lineage.push_back(record.str());
  return out;
}

/// Deterministic split into the first `train_count` rows of a seeded
/// permutation and the rest.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, std::size_t train_count,
                                         std::uint64_t seed) {
  if (train_count == 0 || train_count >= ds.size()) {
    throw RangeError("split: train count " + std::to_string(train_count) + " of " +
                     std::to_string(ds.size()));
  }
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  shuffle_in_place(idx, rng);
  std::vector<std::size_t> a(idx.begin(), idx.begin() + train_count);
  std::vector<std::size_t> b(idx.begin() + train_count, idx.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {ds.select(a), ds.select(b)};
}

}  // namespace metainput
