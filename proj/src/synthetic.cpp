#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "hamm/data.hpp"
#include "hamm/errors.hpp"

namespace hamm {
namespace {

// RGB canvas in [0,1], planar.
struct Canvas {
  int size;
  std::vector<double> px;

  explicit Canvas(int s) : size(s), px(3ul * s * s, 0.0) {}
  double& at(int c, int y, int x) { return px[(static_cast<std::size_t>(c) * size + y) * size + x]; }
  void set(int y, int x, double r, double g, double b) {
    at(0, y, x) = r;
    at(1, y, x) = g;
    at(2, y, x) = b;
  }
};

double severity(int stage, double discordance, Rng& rng) {
  return std::clamp(stage + discordance * rng.normal(), -0.5, 3.5);
}

// Pattern-deviation style map: light field with a dot grid, dark scotomas
// whose count and extent grow with severity.
void render_vf(Canvas& cv, double sev, Rng& rng) {
  const int S = cv.size;
  const int spacing = std::max(4, S / 12);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const bool dot = (y % spacing == spacing / 2) && (x % spacing == spacing / 2);
      const double v = dot ? 0.6 : 0.85;
      cv.set(y, x, v, v, v);
    }
  const int patches = 1 + static_cast<int>(std::lround(std::max(sev, 0.0) * 1.5));
  const double dark_fraction = std::clamp(0.04 + 0.11 * sev, 0.01, 0.5);
  const double radius = S * std::sqrt(dark_fraction / (patches * std::numbers::pi));
  for (int k = 0; k < patches; ++k) {
    const double cy = rng.uniform(radius, S - radius), cx = rng.uniform(radius, S - radius);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
        if (d > radius + 1.0) continue;
        const double w = std::clamp(radius + 1.0 - d, 0.0, 1.0);  // one-pixel soft edge
        for (int c = 0; c < 3; ++c) cv.at(c, y, x) = (1 - w) * cv.at(c, y, x) + w * 0.12;
      }
  }
}

// Fundus: orange retina with vignette, optic disc and a cup whose ratio to the
// disc grows with severity, plus a few vessels.
void render_fundus(Canvas& cv, double sev, Rng& rng) {
  const int S = cv.size;
  const double cy = S * (0.5 + rng.uniform(-0.08, 0.08)), cx = S * (0.5 + rng.uniform(-0.08, 0.08));
  const double disc = S * rng.uniform(0.17, 0.21);
  const double cup = disc * std::clamp(0.25 + 0.16 * sev, 0.1, 0.92);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double r = std::hypot(y + 0.5 - S / 2.0, x + 0.5 - S / 2.0) / (0.5 * S);
      const double vignette = std::clamp(1.0 - 0.5 * r * r, 0.3, 1.0);
      cv.set(y, x, 0.70 * vignette, 0.30 * vignette, 0.15 * vignette);
    }
  for (int v = 0; v < 3; ++v) {
    const double angle = rng.uniform(0.0, 2 * std::numbers::pi);
    for (double t = disc * 0.8; t < S; t += 0.5) {
      const int y = static_cast<int>(cy + t * std::sin(angle)), x = static_cast<int>(cx + t * std::cos(angle));
      if (y < 0 || y >= S || x < 0 || x >= S) break;
      cv.set(y, x, 0.45, 0.08, 0.05);
    }
  }
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
      if (d <= cup)
        cv.set(y, x, 1.0, 0.95, 0.85);
      else if (d <= disc)
        cv.set(y, x, 0.95, 0.75, 0.45);
    }
}

// Circumpapillary OCT: dark background with a bright nerve-fibre band whose
// thickness shrinks with severity, and a fainter deeper layer.
void render_oct(Canvas& cv, double sev, Rng& rng) {
  const int S = cv.size;
  const double top = S * rng.uniform(0.30, 0.40);
  const double thickness = S * std::clamp(0.20 - 0.04 * sev, 0.02, 0.3);
  const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
  const double amp = 0.03 * S;
  for (int x = 0; x < S; ++x) {
    const double wave = amp * std::sin(2 * std::numbers::pi * x / S + phase);
    const double b0 = top + wave, b1 = b0 + thickness;
    const double d0 = b1 + 0.08 * S, d1 = d0 + 0.05 * S;
    for (int y = 0; y < S; ++y) {
      const double yc = y + 0.5;
      double v = 0.06;
      if (yc >= b0 && yc < b1)
        v = 0.85 - 0.3 * (yc - b0) / thickness;
      else if (yc >= d0 && yc < d1)
        v = 0.45;
      cv.set(y, x, v, v, v);
    }
  }
}

void add_artifact(Canvas& cv, Rng& rng) {
  const int S = cv.size;
  const int h = S / 2, w = S / 2;
  const int y0 = static_cast<int>(rng.index(static_cast<std::size_t>(S - h + 1)));
  const int x0 = static_cast<int>(rng.index(static_cast<std::size_t>(S - w + 1)));
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) cv.set(y, x, 0.02, 0.02, 0.02);
  for (double& v : cv.px) v += 0.35 * rng.normal();
}

Tensor finish(Canvas& cv, double noise, Rng& rng) {
  const int S = cv.size;
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  std::vector<std::uint8_t> rgb(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(cv.px[c * plane + i] + noise * rng.normal(), 0.0, 1.0);
      rgb[3 * i + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return normalize_rgb8(rgb, S);
}

}  // namespace

std::vector<MultimodalSample> generate_synthetic(int n_per_class, int image_size, std::uint64_t seed,
                                                 const SynthConfig& config) {
  if (n_per_class < 1) throw ConfigError("generate_synthetic: n_per_class must be >= 1");
  if (image_size < 32) throw ConfigError("generate_synthetic: image_size must be >= 32");
  std::vector<MultimodalSample> out;
  out.reserve(4ul * n_per_class);
  for (int stage = 0; stage < 4; ++stage)
    for (int i = 0; i < n_per_class; ++i) {
      Rng rng(derive_seed(seed, 0x5717, stage, i));
      MultimodalSample s;
      char id[32];
      std::snprintf(id, sizeof id, "c%d_%05d", stage, i);
      s.id = id;
      s.label = stage;
      for (int m = 0; m < kNumModalities; ++m) {
        Canvas cv(image_size);
        const double sev = severity(stage, config.discordance, rng);
        switch (m) {
          case kFundus: render_fundus(cv, sev, rng); break;
          case kOct: render_oct(cv, sev, rng); break;
          case kVf: render_vf(cv, sev, rng); break;
        }
        if (rng.bernoulli(config.artifact_probability)) add_artifact(cv, rng);
        s.images[m] = finish(cv, config.pixel_noise, rng);
      }
      out.push_back(std::move(s));
    }
  return out;
}

}  // namespace hamm
