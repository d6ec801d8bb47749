#pragma once

#include <string>
#include <vector>

#include "hamm/kernels.hpp"
#include "hamm/rng.hpp"
#include "hamm/tensor.hpp"

namespace hamm {

struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Shape shape) : value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0); }
};

struct NamedParam {
  std::string name;
  Parameter* param;
};
using ParamList = std::vector<NamedParam>;

void zero_grads(const ParamList& params);

/// U(-b, b) with b = gain * sqrt(3 / fan_in); gain 1/sqrt(3) gives the usual
/// 1/sqrt(fan_in) bound, gain sqrt(2) the He bound for ReLU layers.
void init_uniform_fan_in(Tensor& t, int fan_in, double gain, Rng& rng);

inline constexpr double kGainDefault = 0.5773502691896258;  // 1/sqrt(3)
inline constexpr double kGainRelu = 1.4142135623730951;

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, int groups, Rng& rng,
         double gain = kGainRelu);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(const std::string& prefix, ParamList& out);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int stride() const { return stride_; }

  Parameter weight;
  Parameter bias;

 private:
  ConvGeometry geometry(const Tensor& x) const;

  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0, groups_ = 1;
  Tensor input_;
};

/// Row-wise affine map on [N, in] matrices; weight is [out, in].
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, double gain = kGainDefault);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(const std::string& prefix, ParamList& out);

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  Parameter weight;
  Parameter bias;

 private:
  int in_ = 0, out_ = 0;
  Tensor input_;
};

/// Group normalization of [N,C,H,W] maps with a per-channel affine transform
/// (gamma stored as "weight", beta as "bias"). Statistics are per sample.
class GroupNorm {
 public:
  GroupNorm() = default;
  /// Up to 8 groups: the largest power of two dividing `channels` that
  /// leaves at least four channels per group (one group otherwise).
  explicit GroupNorm(int channels, double eps = 1e-5);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(const std::string& prefix, ParamList& out);

  int groups() const { return groups_; }

  Parameter weight;
  Parameter bias;

 private:
  int channels_ = 0, groups_ = 1;
  double eps_ = 1e-5;
  Tensor normalized_;
  std::vector<double> inv_std_;
};

Tensor relu(const Tensor& x);
/// Gradient of ReLU given its output.
Tensor relu_backward(const Tensor& grad_out, const Tensor& out);

Tensor upsample2x(const Tensor& x);
Tensor upsample2x_backward(const Tensor& grad_out);

double sigmoid(double z);

/// Depthwise 3×3 convolution, pointwise 1×1 convolution, ReLU.
class DepthwiseSeparable {
 public:
  DepthwiseSeparable() = default;
  DepthwiseSeparable(int channels, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(const std::string& prefix, ParamList& out);

 private:
  Conv2d depthwise_;
  Conv2d pointwise_;
  Tensor out_;
};

}  // namespace hamm
