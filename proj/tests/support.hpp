#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hamm/nn.hpp"
#include "hamm/rng.hpp"
#include "hamm/tensor.hpp"

namespace hamm::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> random_vec(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Moves every bias off zero so that no ReLU pre-activation sits exactly on
/// the kink, where central differences see the mean of two one-sided slopes.
inline void jitter_biases(const ParamList& params, Rng& rng, double scale = 0.1) {
  for (const auto& np : params)
    if (np.name.size() >= 4 && np.name.compare(np.name.size() - 4, 4, "bias") == 0)
      for (double& v : np.param->value.values()) v += rng.uniform(-scale, scale);
}

struct GradCheck {
  double max_error = 0.0;
  std::string worst;
  int checked = 0;
};

/// Central differences of `loss` w.r.t. every entry of `value`, compared
/// against `analytic`. At most `max_entries` entries, evenly strided. Errors
/// are relative to max(|analytic|, |numeric|, floor).
inline void check_tensor(GradCheck& result, const std::string& name, Tensor& value, const Tensor& analytic,
                         const std::function<double()>& loss, double step = 1e-4, std::size_t max_entries = 1u << 30,
                         double floor = 1e-6) {
  const std::size_t stride = std::max<std::size_t>(1, value.size() / std::min(value.size(), max_entries));
  for (std::size_t i = 0; i < value.size(); i += stride) {
    const double saved = value[i];
    value[i] = saved + step;
    const double up = loss();
    value[i] = saved - step;
    const double down = loss();
    value[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err = relative_error(analytic[i], numeric, floor);
    ++result.checked;
    if (err > result.max_error) {
      result.max_error = err;
      result.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[i]) +
                     " numeric=" + std::to_string(numeric);
    }
  }
}

}  // namespace hamm::testing
