#include <algorithm>

#include "hamm/kernels.hpp"

namespace hamm::kernels::serial {

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y) {
  g.validate();
  const int oh = g.out_h(), ow = g.out_w(), cig = g.in_per_group(), cog = g.out_per_group();
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_channels; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? bias[oc] : 0.0;
          const int grp = oc / cog;
          for (int icg = 0; icg < cig; ++icg)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride + ky - g.pad;
                const int ix = ox * g.stride + kx - g.pad;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                const int ic = grp * cig + icg;
                acc += w[((oc * cig + icg) * g.kernel + ky) * g.kernel + kx] *
                       x[((static_cast<long>(n) * g.in_channels + ic) * g.in_h + iy) * g.in_w + ix];
              }
          y[((static_cast<long>(n) * g.out_channels + oc) * oh + oy) * ow + ox] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, const double* gy, const double* w, double* gx) {
  g.validate();
  const int oh = g.out_h(), ow = g.out_w(), cig = g.in_per_group(), cog = g.out_per_group();
  std::fill(gx, gx + static_cast<long>(g.batch) * g.in_channels * g.in_h * g.in_w, 0.0);
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_channels; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double go = gy[((static_cast<long>(n) * g.out_channels + oc) * oh + oy) * ow + ox];
          const int grp = oc / cog;
          for (int icg = 0; icg < cig; ++icg)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride + ky - g.pad;
                const int ix = ox * g.stride + kx - g.pad;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                const int ic = grp * cig + icg;
                gx[((static_cast<long>(n) * g.in_channels + ic) * g.in_h + iy) * g.in_w + ix] +=
                    go * w[((oc * cig + icg) * g.kernel + ky) * g.kernel + kx];
              }
        }
}

void conv2d_backward_params(const ConvGeometry& g, const double* x, const double* gy, double* gw, double* gb) {
  g.validate();
  const int oh = g.out_h(), ow = g.out_w(), cig = g.in_per_group(), cog = g.out_per_group();
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_channels; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double go = gy[((static_cast<long>(n) * g.out_channels + oc) * oh + oy) * ow + ox];
          if (gb) gb[oc] += go;
          const int grp = oc / cog;
          for (int icg = 0; icg < cig; ++icg)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride + ky - g.pad;
                const int ix = ox * g.stride + kx - g.pad;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                const int ic = grp * cig + icg;
                gw[((oc * cig + icg) * g.kernel + ky) * g.kernel + kx] +=
                    go * x[((static_cast<long>(n) * g.in_channels + ic) * g.in_h + iy) * g.in_w + ix];
              }
        }
}

namespace {
struct Tap {
  int i0, i1;
  double l0, l1;
};

Tap source_tap(int o, int in) {
  double src = (o + 0.5) * 0.5 - 0.5;
  if (src < 0) src = 0;
  const int i0 = static_cast<int>(src);
  const int i1 = i0 < in - 1 ? i0 + 1 : i0;
  const double l1 = src - i0;
  return {i0, i1, 1.0 - l1, l1};
}
}  // namespace

void upsample2x_forward(int planes, int h, int w, const double* x, double* y) {
  for (int p = 0; p < planes; ++p)
    for (int oy = 0; oy < 2 * h; ++oy)
      for (int ox = 0; ox < 2 * w; ++ox) {
        const Tap ty = source_tap(oy, h), tx = source_tap(ox, w);
        const double* src = x + static_cast<long>(p) * h * w;
        y[(static_cast<long>(p) * 2 * h + oy) * 2 * w + ox] =
            ty.l0 * (tx.l0 * src[ty.i0 * w + tx.i0] + tx.l1 * src[ty.i0 * w + tx.i1]) +
            ty.l1 * (tx.l0 * src[ty.i1 * w + tx.i0] + tx.l1 * src[ty.i1 * w + tx.i1]);
      }
}

void upsample2x_backward(int planes, int h, int w, const double* gy, double* gx) {
  std::fill(gx, gx + static_cast<long>(planes) * h * w, 0.0);
  for (int p = 0; p < planes; ++p)
    for (int oy = 0; oy < 2 * h; ++oy)
      for (int ox = 0; ox < 2 * w; ++ox) {
        const Tap ty = source_tap(oy, h), tx = source_tap(ox, w);
        const double g = gy[(static_cast<long>(p) * 2 * h + oy) * 2 * w + ox];
        double* dst = gx + static_cast<long>(p) * h * w;
        dst[ty.i0 * w + tx.i0] += g * ty.l0 * tx.l0;
        dst[ty.i0 * w + tx.i1] += g * ty.l0 * tx.l1;
        dst[ty.i1 * w + tx.i0] += g * ty.l1 * tx.l0;
        dst[ty.i1 * w + tx.i1] += g * ty.l1 * tx.l1;
      }
}

}  // namespace hamm::kernels::serial
