#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "metainput/dataset.hpp"
#include "metainput/random.hpp"

namespace metainput {

enum class CorruptionKind {
  kGaussianNoise,
  kGaussianBlur,
  kSaltPepper,
  kSpeckle,
  kComprehensive,
};

inline std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kGaussianNoise: return "gaussian_noise";
    case CorruptionKind::kGaussianBlur: return "gaussian_blur";
    case CorruptionKind::kSaltPepper: return "salt_pepper";
    case CorruptionKind::kSpeckle: return "speckle";
    case CorruptionKind::kComprehensive: return "comprehensive";
  }
  return "unknown";
}

// Accepts the long names and the GN/GB/SP/SN abbreviations.
inline CorruptionKind parse_corruption_kind(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), ::tolower);
  if (name == "gaussian_noise" || name == "gn") return CorruptionKind::kGaussianNoise;
  if (name == "gaussian_blur" || name == "gb") return CorruptionKind::kGaussianBlur;
  if (name == "salt_pepper" || name == "sp") return CorruptionKind::kSaltPepper;
  if (name == "speckle" || name == "sn") return CorruptionKind::kSpeckle;
  if (name == "comprehensive" || name == "mix") return CorruptionKind::kComprehensive;
  throw ValidationError("corruption: unknown kind '" + name + "'");
}

/// One corruption with its parameters. Only the fields the kind uses are
/// read; "comprehensive" reads all four.
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  double target_psnr_db = 26.0;
  double sigma = 1.0;
  double flip_prob = 0.05;
  double variance = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    const bool all = kind == CorruptionKind::kComprehensive;
    if ((all || kind == CorruptionKind::kGaussianNoise) &&
        !(target_psnr_db > 0.0 && std::isfinite(target_psnr_db))) {
      throw ValidationError("corruption: target_psnr_db must be positive, got " +
                            std::to_string(target_psnr_db));
    }
    if ((all || kind == CorruptionKind::kGaussianBlur) && !(sigma > 0.0 && sigma < 64.0)) {
      throw ValidationError("corruption: blur sigma must be in (0, 64), got " + std::to_string(sigma));
    }
    if ((all || kind == CorruptionKind::kSaltPepper) && !(flip_prob >= 0.0 && flip_prob <= 1.0)) {
      throw ValidationError("corruption: flip_prob must be in [0,1], got " + std::to_string(flip_prob));
    }
    if ((all || kind == CorruptionKind::kSpeckle) && !(variance >= 0.0 && std::isfinite(variance))) {
      throw ValidationError("corruption: speckle variance must be non-negative, got " +
                            std::to_string(variance));
    }
  }

  // Short label used in reports, e.g. "GN 23dB".
  std::string label() const {
    std::ostringstream os;
    switch (kind) {
      case CorruptionKind::kGaussianNoise: os << "GN " << target_psnr_db << "dB"; break;
      case CorruptionKind::kGaussianBlur: os << "GB s=" << sigma; break;
      case CorruptionKind::kSaltPepper: os << "SP p=" << flip_prob; break;
      case CorruptionKind::kSpeckle: os << "SN v=" << variance; break;
      case CorruptionKind::kComprehensive: os << "GN+GB+SP+SN"; break;
    }
    return os.str();
  }

  friend bool operator==(const CorruptionSpec&, const CorruptionSpec&) = default;
};

/// Per-image PSNR in dB and their batch mean. Identical images yield +inf.
struct PsnrReport {
  std::vector<double> per_image;
  double mean = 0.0;
};

inline double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline std::string format_db(double db) {
  if (std::isinf(db)) return "inf";
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << db;
  return os.str();
}

inline PsnrReport measure_psnr(const Dataset& clean, const Dataset& noisy) {
  if (clean.images.shape() != noisy.images.shape()) {
    throw shape_mismatch("measure_psnr", clean.images.shape(), noisy.images.shape());
  }
  PsnrReport report;
  const std::size_t stride = clean.image_shape().size();
  double total = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const float* a = clean.image(i);
    const float* b = noisy.image(i);
    double sq = 0.0;
    for (std::size_t p = 0; p < stride; ++p) {
      const double d = static_cast<double>(a[p]) - b[p];
      sq += d * d;
    }
    report.per_image.push_back(psnr_from_mse(sq / static_cast<double>(stride)));
    total += report.per_image.back();
  }
  report.mean = clean.size() ? total / static_cast<double>(clean.size()) : 0.0;
  return report;
}

namespace detail {

inline std::vector<float> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> w(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    w[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += w[i + radius];
  }
  std::vector<float> k(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) k[i] = static_cast<float>(w[i] / total);
  return k;
}

// Separable blur of one H×W×C image, replicated borders.
inline void blur_image(float* img, std::size_t h, std::size_t w, std::size_t c,
                       const std::vector<float>& kernel) {
  const long radius = static_cast<long>(kernel.size() / 2);
  std::vector<float> tmp(h * w * c);
  auto clampi = [](long v, long hi) { return std::clamp(v, 0L, hi - 1); };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        float acc = 0.0f;
        for (long k = -radius; k <= radius; ++k) {
          const long xx = clampi(static_cast<long>(x) + k, static_cast<long>(w));
          acc += kernel[k + radius] * img[(y * w + xx) * c + ch];
        }
        tmp[(y * w + x) * c + ch] = acc;
      }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        float acc = 0.0f;
        for (long k = -radius; k <= radius; ++k) {
          const long yy = clampi(static_cast<long>(y) + k, static_cast<long>(h));
          acc += kernel[k + radius] * tmp[(yy * w + x) * c + ch];
        }
        img[(y * w + x) * c + ch] = std::clamp(acc, 0.0f, 1.0f);
      }
}

inline void salt_pepper_image(float* img, std::size_t pixels, std::size_t c, double p, Rng& rng) {
  for (std::size_t q = 0; q < pixels; ++q) {
    const double u = uniform01(rng);
    if (u < p / 2.0) {
      std::fill(img + q * c, img + (q + 1) * c, 0.0f);
    } else if (u < p) {
      std::fill(img + q * c, img + (q + 1) * c, 1.0f);
    }
  }
}

inline void speckle_image(float* img, std::size_t n, double variance, Rng& rng) {
  const double sd = std::sqrt(variance);
  for (std::size_t i = 0; i < n; ++i) {
    const double noise = sd * standard_normal(rng);
    img[i] = std::clamp(static_cast<float>(img[i] * (1.0 + noise)), 0.0f, 1.0f);
  }
}

inline void gaussian_noise_image(float* img, std::size_t n, double sd, Rng& rng) {
  for (std::size_t i = 0; i < n; ++i) {
    img[i] = std::clamp(static_cast<float>(img[i] + sd * standard_normal(rng)), 0.0f, 1.0f);
  }
}

// Additive noise with a fixed standard-normal field: x + sd·z, clamped.
inline Tensor apply_noise_field(const Tensor& clean, const std::vector<float>& z, double sd) {
  Tensor out(clean.shape());
  auto src = clean.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = std::clamp(static_cast<float>(src[i] + sd * z[i]), 0.0f, 1.0f);
  }
  return out;
}

// Mean PSNR of the noisy tensor against the clean one, computed per image.
inline double mean_psnr(const Dataset& clean, const Tensor& noisy) {
  Dataset tmp;
  tmp.images = noisy;
  return measure_psnr(clean, tmp).mean;
}

// Standard deviation of additive Gaussian noise, clamped to [0,1], whose
// batch-mean PSNR hits `target` within `tolerance` dB. Starts from the
// closed form sd = 10^(-target/20) and bisects in log space when clamping
// pulls the measured PSNR outside the tolerance.
inline double solve_noise_sd(const Dataset& clean, const std::vector<float>& z, double target,
                             double tolerance = 0.5) {
  const double closed = std::pow(10.0, -target / 20.0);
  auto psnr_at = [&](double sd) { return mean_psnr(clean, apply_noise_field(clean.images, z, sd)); };
  double at_closed = psnr_at(closed);
  if (std::abs(at_closed - target) <= tolerance) return closed;
  // PSNR is non-increasing in sd: each clamped error |clamp(x+sd·z)-x| grows with sd.
  double lo = closed, hi = closed;
  if (at_closed > target) {
    while (psnr_at(hi) > target) {
      hi *= 2.0;
      if (hi > 1e3) {
        throw RangeError("corrupt: target PSNR " + format_db(target) +
                         " dB is unreachable for this content after clamping");
      }
    }
  } else {
    while (psnr_at(lo) < target) {
      lo /= 2.0;
      if (lo < 1e-9) throw RangeError("corrupt: target PSNR " + format_db(target) + " dB is unreachable");
    }
  }
  // Bisect to a quarter of the tolerance so later byte quantization keeps
  // the result inside the band.
  for (int iter = 0; iter < 80; ++iter) {
    const double mid = std::sqrt(lo * hi);
    const double p = psnr_at(mid);
    if (std::abs(p - target) <= tolerance / 4.0) return mid;
    (p > target ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

}  // namespace detail

/// Applies one corruption. A pure function of (input, spec): the same pair
/// always yields the same bits. All outputs are clamped to [0,1].
inline Dataset corrupt(const Dataset& ds, const CorruptionSpec& spec) {
  spec.validate();
  if (ds.images.rank() != 4) throw ShapeError("corrupt: expected N×H×W×C, got " + shape_str(ds.images.shape()));
  Dataset out = ds;
  const ImageShape s = ds.image_shape();
  const std::size_t stride = s.size();
  std::ostringstream record;
  record << "corrupt(" << to_string(spec.kind);

  switch (spec.kind) {
    case CorruptionKind::kGaussianNoise: {
      Rng rng(spec.seed);
      std::vector<float> z(ds.images.size());
      for (auto& v : z) v = static_cast<float>(standard_normal(rng));
      const double sd = detail::solve_noise_sd(ds, z, spec.target_psnr_db);
      out.images = detail::apply_noise_field(ds.images, z, sd);
      record << ", target_psnr_db=" << spec.target_psnr_db << ", sd=" << sd;
      break;
    }
    case CorruptionKind::kGaussianBlur: {
      const auto kernel = detail::gaussian_kernel(spec.sigma);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        detail::blur_image(out.images.data().data() + i * stride, s.height, s.width, s.channels, kernel);
      }
      record << ", sigma=" << spec.sigma;
      break;
    }
    case CorruptionKind::kSaltPepper: {
      Rng rng(spec.seed);
      detail::salt_pepper_image(out.images.data().data(), ds.size() * s.height * s.width,
                                s.channels, spec.flip_prob, rng);
      record << ", flip_prob=" << spec.flip_prob;
      break;
    }
    case CorruptionKind::kSpeckle: {
      Rng rng(spec.seed);
      detail::speckle_image(out.images.data().data(), out.images.size(), spec.variance, rng);
      record << ", variance=" << spec.variance;
      break;
    }
    case CorruptionKind::kComprehensive: {
      // Per image: pick one of the four kinds uniformly, from a stream
      // seeded by (seed, image index).
      const auto kernel = detail::gaussian_kernel(spec.sigma);
      const double sd = std::pow(10.0, -spec.target_psnr_db / 20.0);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        Rng rng(derive_seed(spec.seed, i));
        float* img = out.images.data().data() + i * stride;
        switch (rng() % 4) {
          case 0: detail::gaussian_noise_image(img, stride, sd, rng); break;
          case 1: detail::blur_image(img, s.height, s.width, s.channels, kernel); break;
          case 2: detail::salt_pepper_image(img, s.height * s.width, s.channels, spec.flip_prob, rng); break;
          default: detail::speckle_image(img, stride, spec.variance, rng); break;
        }
      }
      record << ", target_psnr_db=" << spec.target_psnr_db << ", sigma=" << spec.sigma
             << ", flip_prob=" << spec.flip_prob << ", variance=" << spec.variance;
      break;
    }
  }
  record << ", seed=" << spec.seed << ")";
  out.lineage.push_back(record.str());
  return out;
}

}  // namespace metainput
