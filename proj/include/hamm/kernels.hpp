#pragma once

// Convolution and resampling kernels. Every kernel has a straightforward
// serial reference and an OpenMP-parallel version with a cache-friendlier
// loop order; the layers call the parallel versions and the tests hold the
// two to agreement.

namespace hamm {

struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int out_channels = 1;
  int in_h = 1;
  int in_w = 1;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int groups = 1;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int in_per_group() const { return in_channels / groups; }
  int out_per_group() const { return out_channels / groups; }
  /// Throws std::invalid_argument on an inconsistent geometry.
  void validate() const;
};

namespace kernels {

namespace serial {
/// y[n,oc] = b[oc] + sum_{ic,ky,kx} w[oc,ic,ky,kx] * x[n,ic,...]; weights are
/// [out][in/groups][k][k]. `bias` may be null.
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y);
/// Overwrites gx.
void conv2d_backward_input(const ConvGeometry& g, const double* gy, const double* w, double* gx);
/// Accumulates into gw and gb (gb may be null).
void conv2d_backward_params(const ConvGeometry& g, const double* x, const double* gy, double* gw, double* gb);

/// Bilinear ×2 upsampling of `planes` independent h×w planes, half-pixel
/// centers (no corner alignment).
void upsample2x_forward(int planes, int h, int w, const double* x, double* y);
/// Overwrites gx.
void upsample2x_backward(int planes, int h, int w, const double* gy, double* gx);
}  // namespace serial

namespace parallel {
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y);
void conv2d_backward_input(const ConvGeometry& g, const double* gy, const double* w, double* gx);
void conv2d_backward_params(const ConvGeometry& g, const double* x, const double* gy, double* gw, double* gb);
void upsample2x_forward(int planes, int h, int w, const double* x, double* y);
void upsample2x_backward(int planes, int h, int w, const double* gy, double* gx);
}  // namespace parallel

}  // namespace kernels
}  // namespace hamm
