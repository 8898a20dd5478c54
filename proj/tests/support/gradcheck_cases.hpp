#pragma once

// Gradient-check cases shared by the unit suite and the acceptance run. Each
// case draws one random small instance and returns the worst relative
// error between autodiff and central differences.

#include <algorithm>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "metainput/graph.hpp"
#include "metainput/ops.hpp"
#include "support/finite_diff.hpp"

namespace metainput::testing {

inline constexpr int kTrials = 20;
inline constexpr double kTolerance = 1e-2;
inline constexpr double kEps = 1e-3;

using Build = std::function<Var(Graph&, const std::vector<Var>&)>;

// Scalarizes a non-scalar output as sum((out + r)^2) with a fixed random r so
// every output element gets a distinct upstream weight. The numeric side
// reduces that sum in double outside the graph; a float scalar loss would
// put ~1e-4 of rounding noise into every difference quotient.
inline double gradcheck(std::vector<Tensor>& leaves, const Build& build, std::mt19937_64& rng,
                        bool scalar_output = false) {
  Tensor proj;
  auto output_of = [&](Graph& g) {
    std::vector<Var> vars;
    for (auto& t : leaves) vars.push_back(g.param(t));
    Var out = build(g, vars);
    if (!scalar_output && proj.empty()) proj = random_tensor(out.shape(), rng, -0.5f, 0.5f);
    return out;
  };
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  {
    Graph g;
    Var out = output_of(g);
    g.backward(scalar_output ? out : sum(square(add(out, g.input(proj)))));
  }
  auto numeric_loss = [&] {
    Graph g;
    const Tensor& out = output_of(g).value();
    if (scalar_output) return static_cast<double>(out[0]);
    double total = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = static_cast<double>(out[i]) + proj[i];
      total += d * d;
    }
    return total;
  };
  double worst = 0.0;
  for (auto& t : leaves) {
    const auto numeric = numeric_gradient(t, numeric_loss, kEps);
    worst = std::max(worst, max_relative_error(t.grad(), numeric));
  }
  return worst;
}

// Smallest distance of any pre-activation to the ReLU kink, and smallest
// gap between the two largest candidates of any 2x2 pool window.
inline double kink_margin(const Tensor& pre) {
  double margin = 1e9;
  for (float v : pre.data()) margin = std::min(margin, std::abs(static_cast<double>(v)));
  const std::size_t n = pre.dim(0), h = pre.dim(1), w = pre.dim(2), c = pre.dim(3);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y + 1 < h; y += 2)
      for (std::size_t x = 0; x + 1 < w; x += 2)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::vector<float> cell;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx)
              cell.push_back(std::max(0.0f, pre[((b * h + y + dy) * w + x + dx) * c + ch]));
          std::sort(cell.rbegin(), cell.rend());
          if (cell[0] > 0.0f) margin = std::min(margin, static_cast<double>(cell[0] - cell[1]));
        }
  return margin;
}

struct GradCase {
  std::string name;
  std::function<double(std::mt19937_64&)> run;
};

inline const std::vector<GradCase>& grad_cases() {
  static const std::vector<GradCase> cases{
      {"AddSameShape",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({2, 3, 2}, rng), random_tensor({2, 3, 2}, rng)};
         return gradcheck(leaves, [](Graph&, const auto& v) { return add(v[0], v[1]); }, rng);
       }},
      {"AddBroadcastOverBatch",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({3, 2, 2, 1}, rng), random_tensor({2, 2, 1}, rng)};
         return gradcheck(leaves, [](Graph&, const auto& v) { return add(v[0], v[1]); }, rng);
       }},
      {"Matmul",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
         return gradcheck(leaves, [](Graph&, const auto& v) { return matmul(v[0], v[1]); }, rng);
       }},
      {"Conv2dSamePadding",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({2, 4, 4, 2}, rng),
                                    random_tensor({3, 3, 2, 3}, rng, -0.5f, 0.5f)};
         return gradcheck(leaves, [](Graph&, const auto& v) { return conv2d(v[0], v[1], {1, 1}); }, rng);
       }},
      {"Conv2dStrided",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({1, 5, 5, 1}, rng), random_tensor({2, 2, 1, 2}, rng)};
         return gradcheck(leaves, [](Graph&, const auto& v) { return conv2d(v[0], v[1], {2, 0}); }, rng);
       }},
      {"Relu",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_away_from_zero({2, 3, 3}, rng)};
         return gradcheck(leaves, [](Graph&, const auto& v) { return relu(v[0]); }, rng);
       }},
      {"Clamp01",
       [](std::mt19937_64& rng) {
         Tensor x({12});
         std::uniform_real_distribution<float> dist(-0.5f, 1.5f);
         for (auto& e : x.data()) {
           do e = dist(rng);
           while (std::abs(e) < 0.01f || std::abs(e - 1.0f) < 0.01f);
         }
         std::vector<Tensor> leaves{x};
         return gradcheck(leaves, [](Graph&, const auto& v) { return clamp01(v[0]); }, rng);
       }},
      {"Maxpool2d",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_distinct({2, 4, 4, 2}, rng)};
         return gradcheck(leaves, [](Graph&, const auto& v) { return maxpool2d(v[0]); }, rng);
       }},
      {"BatchnormTrain",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({4, 2, 2, 3}, rng), random_tensor({3}, rng, 0.5f, 1.5f),
                                    random_tensor({3}, rng)};
         BatchNormStats stats;
         return gradcheck(
             leaves,
             [&](Graph&, const auto& v) {
               return batchnorm(v[0], v[1], v[2], stats, {BatchNormMode::kTrain});
             },
             rng);
       }},
      {"BatchnormInference",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({3, 2, 2, 2}, rng), random_tensor({2}, rng, 0.5f, 1.5f),
                                    random_tensor({2}, rng)};
         BatchNormStats stats{random_tensor({2}, rng, -0.2f, 0.2f), random_tensor({2}, rng, 0.5f, 2.0f)};
         return gradcheck(
             leaves,
             [&](Graph&, const auto& v) {
               return batchnorm(v[0], v[1], v[2], stats, {BatchNormMode::kInference});
             },
             rng);
       }},
      {"Sum",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({3, 4}, rng)};
         return gradcheck(
             leaves, [](Graph&, const auto& v) { return sum(v[0]); }, rng, /*scalar_output=*/true);
       }},
      {"Flatten",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({2, 2, 3, 1}, rng)};
         return gradcheck(leaves, [](Graph&, const auto& v) { return flatten(v[0]); }, rng);
       }},
      {"SoftmaxCrossEntropy",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({4, 5}, rng, -2.0f, 2.0f)};
         std::uniform_int_distribution<std::int32_t> cls(0, 4);
         std::vector<std::int32_t> labels(4);
         for (auto& y : labels) y = cls(rng);
         return gradcheck(
             leaves, [&](Graph&, const auto& v) { return softmax_cross_entropy(v[0], labels); }, rng,
             /*scalar_output=*/true);
       }},
      {"Square",
       [](std::mt19937_64& rng) {
         std::vector<Tensor> leaves{random_tensor({5}, rng)};
         return gradcheck(leaves, [](Graph&, const auto& v) { return square(v[0]); }, rng);
       }},
      {"ThreeLayerNetwork",
       [](std::mt19937_64& rng) {
         const std::vector<std::int32_t> labels{0, 2};
         BatchNormStats stats{Tensor({2}, 0.1f), Tensor({2}, 0.8f)};
         auto build = [&](const Tensor& x) {
           return [&](Graph& g, const std::vector<Var>& v) {
             Var h = conv2d(g.input(x), v[0], {1, 1});
             h = batchnorm(h, v[1], v[2], stats, {BatchNormMode::kInference});
             h = maxpool2d(relu(h));
             h = add(matmul(flatten(h), v[3]), v[4]);
             return softmax_cross_entropy(h, labels);
           };
         };
         for (int attempt = 0; attempt < 100; ++attempt) {
           std::vector<Tensor> leaves{
               random_tensor({3, 3, 1, 2}, rng, -0.7f, 0.7f),  // conv weight
               random_tensor({2}, rng, 0.5f, 1.5f),            // bn gamma
               random_tensor({2}, rng, -0.2f, 0.2f),           // bn beta
               random_tensor({8, 3}, rng, -0.7f, 0.7f),        // dense weight
               random_tensor({3}, rng, -0.2f, 0.2f),           // dense bias
           };
           const Tensor x = random_tensor({2, 4, 4, 1}, rng, 0.0f, 1.0f);
           {
             Graph g;
             Var pre = batchnorm(conv2d(g.input(x), g.input(leaves[0]), {1, 1}), g.input(leaves[1]),
                                 g.input(leaves[2]), stats, {BatchNormMode::kInference});
             if (kink_margin(pre.value()) < 0.02) continue;
           }
           return gradcheck(leaves, build(x), rng, /*scalar_output=*/true);
         }
         return std::numeric_limits<double>::infinity();
       }},
  };
  return cases;
}

}  // namespace metainput::testing
