#include "hamm/nn.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hamm {

void zero_grads(const ParamList& params) {
  for (const auto& p : params) p.param->zero_grad();
}

void init_uniform_fan_in(Tensor& t, int fan_in, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / fan_in);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, int groups, Rng& rng,
               double gain)
    : weight({out_channels, in_channels / groups, kernel, kernel}),
      bias({out_channels}),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      groups_(groups) {
  init_uniform_fan_in(weight.value, in_channels / groups * kernel * kernel, gain, rng);
}

ConvGeometry Conv2d::geometry(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_)
    throw std::invalid_argument("Conv2d: expected [N," + std::to_string(in_) + ",H,W], got " + to_string(x.shape()));
  ConvGeometry g{x.dim(0), in_, out_, x.dim(2), x.dim(3), kernel_, stride_, pad_, groups_};
  g.validate();
  return g;
}

Tensor Conv2d::forward(const Tensor& x) {
  const ConvGeometry g = geometry(x);
  Tensor y({g.batch, out_, g.out_h(), g.out_w()});
  kernels::parallel::conv2d_forward(g, x.data(), weight.value.data(), bias.value.data(), y.data());
  input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const ConvGeometry g = geometry(input_);
  if (grad_out.shape() != Shape{g.batch, out_, g.out_h(), g.out_w()})
    throw std::invalid_argument("Conv2d::backward: gradient shape " + to_string(grad_out.shape()));
  kernels::parallel::conv2d_backward_params(g, input_.data(), grad_out.data(), weight.grad.data(), bias.grad.data());
  Tensor gx(input_.shape());
  kernels::parallel::conv2d_backward_input(g, grad_out.data(), weight.value.data(), gx.data());
  return gx;
}

void Conv2d::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

Linear::Linear(int in, int out, Rng& rng, double gain) : weight({out, in}), bias({out}), in_(in), out_(out) {
  init_uniform_fan_in(weight.value, in, gain, rng);
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != in_)
    throw std::invalid_argument("Linear: expected [N," + std::to_string(in_) + "], got " + to_string(x.shape()));
  const int n = x.dim(0);
  Tensor y({n, out_});
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < out_; ++o) {
      double acc = bias.value[o];
      const double* w = weight.value.data() + static_cast<long>(o) * in_;
      const double* xr = x.data() + static_cast<long>(r) * in_;
      for (int i = 0; i < in_; ++i) acc += w[i] * xr[i];
      y[static_cast<std::size_t>(r) * out_ + o] = acc;
    }
  input_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const int n = input_.dim(0);
  if (grad_out.shape() != Shape{n, out_}) throw std::invalid_argument("Linear::backward: gradient shape mismatch");
  Tensor gx({n, in_});
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < out_; ++o) {
      const double g = grad_out[static_cast<std::size_t>(r) * out_ + o];
      if (g == 0.0) continue;
      bias.grad[o] += g;
      double* gw = weight.grad.data() + static_cast<long>(o) * in_;
      const double* w = weight.value.data() + static_cast<long>(o) * in_;
      const double* xr = input_.data() + static_cast<long>(r) * in_;
      double* gxr = gx.data() + static_cast<long>(r) * in_;
      for (int i = 0; i < in_; ++i) {
        gw[i] += g * xr[i];
        gxr[i] += g * w[i];
      }
    }
  return gx;
}

void Linear::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

GroupNorm::GroupNorm(int channels, double eps)
    : weight(Shape{channels}), bias(Shape{channels}), channels_(channels), groups_(std::gcd(channels, 8)), eps_(eps) {
  if (channels < 1) throw std::invalid_argument("GroupNorm: channels must be positive");
  while (groups_ > 1 && channels / groups_ < 4) groups_ /= 2;
  weight.value.fill(1.0);
}

Tensor GroupNorm::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != channels_) throw std::invalid_argument("GroupNorm: expected [N," + std::to_string(channels_) + ",H,W]");
  const int N = x.dim(0), cg = channels_ / groups_;
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3), span = cg * hw;
  normalized_ = Tensor(x.shape());
  inv_std_.assign(static_cast<std::size_t>(N) * groups_, 0.0);
  Tensor y(x.shape());
#pragma omp parallel for schedule(static)
  for (int ng = 0; ng < N * groups_; ++ng) {
    const double* in = x.data() + ng * span;
    double mean = 0.0;
    for (std::size_t i = 0; i < span; ++i) mean += in[i];
    mean /= static_cast<double>(span);
    double var = 0.0;
    for (std::size_t i = 0; i < span; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<double>(span);
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[ng] = inv;
    double* xhat = normalized_.data() + ng * span;
    double* out = y.data() + ng * span;
    for (int k = 0; k < cg; ++k) {
      const int c = (ng % groups_) * cg + k;
      const double g = weight.value[c], b = bias.value[c];
      for (std::size_t i = k * hw; i < (k + 1) * hw; ++i) {
        xhat[i] = (in[i] - mean) * inv;
        out[i] = g * xhat[i] + b;
      }
    }
  }
  return y;
}

Tensor GroupNorm::backward(const Tensor& grad_out) {
  if (grad_out.shape() != normalized_.shape()) throw std::invalid_argument("GroupNorm::backward: shape mismatch");
  const int N = grad_out.dim(0), cg = channels_ / groups_;
  const std::size_t hw = static_cast<std::size_t>(grad_out.dim(2)) * grad_out.dim(3), span = cg * hw;
  Tensor gx(grad_out.shape());
  std::vector<double> dgamma(static_cast<std::size_t>(N) * channels_), dbeta(dgamma.size());
#pragma omp parallel for schedule(static)
  for (int ng = 0; ng < N * groups_; ++ng) {
    const double* gy = grad_out.data() + ng * span;
    const double* xhat = normalized_.data() + ng * span;
    double* out = gx.data() + ng * span;
    const int n = ng / groups_, c0 = (ng % groups_) * cg;
    double sum_d = 0.0, sum_dx = 0.0;
    for (int k = 0; k < cg; ++k) {
      const double g = weight.value[c0 + k];
      double sg = 0.0, sgx = 0.0;
      for (std::size_t i = k * hw; i < (k + 1) * hw; ++i) {
        sg += gy[i];
        sgx += gy[i] * xhat[i];
      }
      dbeta[static_cast<std::size_t>(n) * channels_ + c0 + k] = sg;
      dgamma[static_cast<std::size_t>(n) * channels_ + c0 + k] = sgx;
      sum_d += g * sg;
      sum_dx += g * sgx;
    }
    const double mean_d = sum_d / static_cast<double>(span), mean_dx = sum_dx / static_cast<double>(span);
    const double inv = inv_std_[ng];
    for (int k = 0; k < cg; ++k) {
      const double g = weight.value[c0 + k];
      for (std::size_t i = k * hw; i < (k + 1) * hw; ++i) out[i] = inv * (g * gy[i] - mean_d - xhat[i] * mean_dx);
    }
  }
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < channels_; ++c) {
      weight.grad[c] += dgamma[static_cast<std::size_t>(n) * channels_ + c];
      bias.grad[c] += dbeta[static_cast<std::size_t>(n) * channels_ + c];
    }
  return gx;
}

void GroupNorm::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& out) {
  require_same_shape(grad_out, out, "relu_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (out[i] <= 0.0) g[i] = 0.0;
  return g;
}

Tensor upsample2x(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("upsample2x expects NCHW");
  Tensor y({x.dim(0), x.dim(1), 2 * x.dim(2), 2 * x.dim(3)});
  kernels::parallel::upsample2x_forward(x.dim(0) * x.dim(1), x.dim(2), x.dim(3), x.data(), y.data());
  return y;
}

Tensor upsample2x_backward(const Tensor& grad_out) {
  if (grad_out.rank() != 4 || grad_out.dim(2) % 2 || grad_out.dim(3) % 2)
    throw std::invalid_argument("upsample2x_backward expects NCHW with even spatial dims");
  Tensor gx({grad_out.dim(0), grad_out.dim(1), grad_out.dim(2) / 2, grad_out.dim(3) / 2});
  kernels::parallel::upsample2x_backward(gx.dim(0) * gx.dim(1), gx.dim(2), gx.dim(3), grad_out.data(), gx.data());
  return gx;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

DepthwiseSeparable::DepthwiseSeparable(int channels, Rng& rng)
    : depthwise_(channels, channels, 3, 1, 1, channels, rng, 1.0), pointwise_(channels, channels, 1, 1, 0, 1, rng) {}

Tensor DepthwiseSeparable::forward(const Tensor& x) {
  out_ = relu(pointwise_.forward(depthwise_.forward(x)));
  return out_;
}

Tensor DepthwiseSeparable::backward(const Tensor& grad_out) {
  return depthwise_.backward(pointwise_.backward(relu_backward(grad_out, out_)));
}

void DepthwiseSeparable::collect(const std::string& prefix, ParamList& out) {
  depthwise_.collect(prefix + ".depthwise", out);
  pointwise_.collect(prefix + ".pointwise", out);
}

}  // namespace hamm
