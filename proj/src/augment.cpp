#include <algorithm>
#include <cmath>

#include "hamm/data.hpp"

namespace hamm {
namespace {

// Works on a [3,S,S] image mapped back to [0,1] pixel space.
Tensor to_unit(const Tensor& image) {
  Tensor u = image;
  const std::size_t plane = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) u[c * plane + i] = image[c * plane + i] * kChannelStd[c] + kChannelMean[c];
  return u;
}

Tensor from_unit(const Tensor& unit) {
  Tensor x = unit;
  const std::size_t plane = static_cast<std::size_t>(unit.dim(1)) * unit.dim(2);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      x[c * plane + i] = (std::clamp(unit[c * plane + i], 0.0, 1.0) - kChannelMean[c]) / kChannelStd[c];
  return x;
}

double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

Tensor color_jitter(const Tensor& image, const AugmentationPolicy& policy, Rng& rng) {
  const double brightness = rng.uniform(policy.jitter_min, policy.jitter_max);
  const double contrast = rng.uniform(policy.jitter_min, policy.jitter_max);
  const double saturation = rng.uniform(policy.jitter_min, policy.jitter_max);
  if (brightness == 1.0 && contrast == 1.0 && saturation == 1.0) return image;

  Tensor u = to_unit(image);
  const std::size_t plane = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
  double* r = u.data();
  double* g = r + plane;
  double* b = g + plane;
  if (brightness != 1.0)
    for (double& v : u.values()) v = std::clamp(v * brightness, 0.0, 1.0);
  if (contrast != 1.0) {
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += luminance(r[i], g[i], b[i]);
    mean /= static_cast<double>(plane);
    for (double& v : u.values()) v = std::clamp((v - mean) * contrast + mean, 0.0, 1.0);
  }
  if (saturation != 1.0)
    for (std::size_t i = 0; i < plane; ++i) {
      const double gray = luminance(r[i], g[i], b[i]);
      for (double* ch : {r, g, b}) ch[i] = std::clamp((ch[i] - gray) * saturation + gray, 0.0, 1.0);
    }
  return from_unit(u);
}

// Random crop of area fraction in [scale_min, scale_max] and aspect ratio in
// [ratio_min, ratio_max], resampled bilinearly back to S×S.
Tensor resized_crop(const Tensor& image, const AugmentationPolicy& policy, Rng& rng) {
  const int S = image.dim(1);
  int cw = S, ch = S, x0 = 0, y0 = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area = rng.uniform(policy.crop_scale_min, policy.crop_scale_max) * S * S;
    const double log_ratio = rng.uniform(std::log(policy.crop_ratio_min), std::log(policy.crop_ratio_max));
    const double ratio = std::exp(log_ratio);
    const int w = static_cast<int>(std::lround(std::sqrt(area * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(area / ratio)));
    if (w < 1 || h < 1 || w > S || h > S) continue;
    cw = w;
    ch = h;
    x0 = static_cast<int>(rng.index(static_cast<std::size_t>(S - w + 1)));
    y0 = static_cast<int>(rng.index(static_cast<std::size_t>(S - h + 1)));
    break;
  }
  if (cw == S && ch == S) return image;

  Tensor out(image.shape());
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  const double sy = static_cast<double>(ch) / S, sx = static_cast<double>(cw) / S;
  for (int oy = 0; oy < S; ++oy) {
    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, ch - 1.0);
    const int iy0 = static_cast<int>(fy), iy1 = std::min(iy0 + 1, ch - 1);
    const double ly = fy - iy0;
    for (int ox = 0; ox < S; ++ox) {
      const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, cw - 1.0);
      const int ix0 = static_cast<int>(fx), ix1 = std::min(ix0 + 1, cw - 1);
      const double lx = fx - ix0;
      for (int c = 0; c < 3; ++c) {
        const double* p = image.data() + c * plane;
        auto px = [&](int y, int x) { return p[static_cast<std::size_t>(y0 + y) * S + x0 + x]; };
        out[c * plane + static_cast<std::size_t>(oy) * S + ox] =
            (1 - ly) * ((1 - lx) * px(iy0, ix0) + lx * px(iy0, ix1)) + ly * ((1 - lx) * px(iy1, ix0) + lx * px(iy1, ix1));
      }
    }
  }
  return out;
}

}  // namespace

AugmentationPolicy AugmentationPolicy::identity() {
  AugmentationPolicy p;
  p.flip_probability = 0.0;
  p.jitter_min = p.jitter_max = 1.0;
  p.crop_scale_min = p.crop_scale_max = 1.0;
  p.crop_ratio_min = p.crop_ratio_max = 1.0;
  return p;
}

Tensor flip_image(const Tensor& image, bool horizontal) {
  const int S = image.dim(1);
  Tensor out(image.shape());
  for (int c = 0; c < image.dim(0); ++c)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const int sy = horizontal ? y : S - 1 - y;
        const int sx = horizontal ? S - 1 - x : x;
        out[(static_cast<std::size_t>(c) * S + y) * S + x] = image[(static_cast<std::size_t>(c) * S + sy) * S + sx];
      }
  return out;
}

MultimodalSample augment(const MultimodalSample& sample, const AugmentationPolicy& policy, Rng& rng) {
  MultimodalSample out = sample;
  const bool shared_hflip = rng.bernoulli(policy.flip_probability);
  auto hflip = [&](int m) {
    const bool flip = policy.synchronous_horizontal_flip ? shared_hflip : rng.bernoulli(policy.flip_probability);
    if (flip && out.present[m]) out.images[m] = flip_image(out.images[m], true);
  };
  auto vflip = [&](int m) {
    if (rng.bernoulli(policy.flip_probability) && out.present[m]) out.images[m] = flip_image(out.images[m], false);
  };
  // Random draws happen whether or not a modality is present so the stream
  // stays aligned across missingness patterns.
  Tensor fundus = out.images[kFundus];
  Tensor cropped = resized_crop(fundus, policy, rng);
  Tensor jittered = color_jitter(cropped, policy, rng);
  if (out.present[kFundus]) out.images[kFundus] = std::move(jittered);
  vflip(kFundus);
  Tensor oct = color_jitter(out.images[kOct], policy, rng);
  if (out.present[kOct]) out.images[kOct] = std::move(oct);
  vflip(kVf);
  for (int m = 0; m < kNumModalities; ++m) hflip(m);
  return out;
}

}  // namespace hamm
