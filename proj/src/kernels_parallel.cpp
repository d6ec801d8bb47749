#include <algorithm>
#include <memory>
#include <stdexcept>
#include <vector>

#include "hamm/kernels.hpp"

namespace hamm {

void ConvGeometry::validate() const {
  if (batch < 1 || in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1 || pad < 0 || groups < 1)
    throw std::invalid_argument("conv geometry: non-positive extent");
  if (in_channels % groups != 0 || out_channels % groups != 0)
    throw std::invalid_argument("conv geometry: channels not divisible by groups");
  if (out_h() < 1 || out_w() < 1) throw std::invalid_argument("conv geometry: empty output");
}

namespace kernels::parallel {
namespace {

// Convolutions run as one matrix product per group over the whole batch:
// the unfolded input ("col") is [cig*k*k, N*oh*ow], so even 1x1 maps give long
// contiguous inner loops.

struct Unfold {
  int rows;   // cig * k * k
  long cols;  // batch * oh * ow
};

Unfold unfold_shape(const ConvGeometry& g) {
  return {g.in_per_group() * g.kernel * g.kernel, static_cast<long>(g.batch) * g.out_h() * g.out_w()};
}

void im2col(const ConvGeometry& g, const double* x, int grp, double* col, bool par) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride, p = g.pad, cig = g.in_per_group();
  const long in_plane = static_cast<long>(g.in_h) * g.in_w, out_plane = static_cast<long>(oh) * ow;
  const Unfold u = unfold_shape(g);
#pragma omp parallel for schedule(static) if (par)
  for (int r = 0; r < u.rows; ++r) {
    const int icg = r / (k * k), ky = (r / k) % k, kx = r % k;
    double* dst = col + r * u.cols;
    for (int n = 0; n < g.batch; ++n) {
      const double* xp = x + (static_cast<long>(n) * g.in_channels + grp * cig + icg) * in_plane;
      double* d = dst + n * out_plane;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * s + ky - p;
        double* drow = d + static_cast<long>(oy) * ow;
        if (iy < 0 || iy >= g.in_h) {
          std::fill(drow, drow + ow, 0.0);
          continue;
        }
        const double* xr = xp + static_cast<long>(iy) * g.in_w;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix = ox * s + kx - p;
          drow[ox] = (ix >= 0 && ix < g.in_w) ? xr[ix] : 0.0;
        }
      }
    }
  }
}

std::unique_ptr<double[]> scratch(long n) { return std::unique_ptr<double[]>(new double[n]); }

// Adds the unfolded gradient back onto the input planes of one group.
void col2im(const ConvGeometry& g, const double* col, int grp, double* gx, bool par) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride, p = g.pad, cig = g.in_per_group();
  const long in_plane = static_cast<long>(g.in_h) * g.in_w, out_plane = static_cast<long>(oh) * ow;
  const Unfold u = unfold_shape(g);
#pragma omp parallel for schedule(static) if (par)
  for (int icg = 0; icg < cig; ++icg)
    for (int kk = 0; kk < k * k; ++kk) {
      const int ky = kk / k, kx = kk % k;
      const double* src = col + (static_cast<long>(icg) * k * k + kk) * u.cols;
      for (int n = 0; n < g.batch; ++n) {
        double* xp = gx + (static_cast<long>(n) * g.in_channels + grp * cig + icg) * in_plane;
        const double* sp = src + n * out_plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s + ky - p;
          if (iy < 0 || iy >= g.in_h) continue;
          double* xr = xp + static_cast<long>(iy) * g.in_w;
          const double* srow = sp + static_cast<long>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s + kx - p;
            if (ix >= 0 && ix < g.in_w) xr[ix] += srow[ox];
          }
        }
      }
    }
}

// Output gradient of one group rearranged to [cog, N*oh*ow].
void gather_rows(const ConvGeometry& g, const double* gy, int grp, double* rows, bool par) {
  const int cog = g.out_per_group();
  const long out_plane = static_cast<long>(g.out_h()) * g.out_w(), cols = g.batch * out_plane;
#pragma omp parallel for schedule(static) if (par)
  for (int ocg = 0; ocg < cog; ++ocg)
    for (int n = 0; n < g.batch; ++n) {
      const double* src = gy + (static_cast<long>(n) * g.out_channels + grp * cog + ocg) * out_plane;
      std::copy(src, src + out_plane, rows + ocg * cols + n * out_plane);
    }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y) {
  g.validate();
  const Unfold u = unfold_shape(g);
  const int cog = g.out_per_group();
  const long out_plane = static_cast<long>(g.out_h()) * g.out_w();
  const bool inner = g.groups == 1;
#pragma omp parallel for schedule(static) if (!inner)
  for (int grp = 0; grp < g.groups; ++grp) {
    const auto col = scratch(u.rows * u.cols);
    im2col(g, x, grp, col.get(), inner);
#pragma omp parallel for schedule(static) if (inner)
    for (int ocg = 0; ocg < cog; ++ocg) {
      const int oc = grp * cog + ocg;
      std::vector<double> acc(u.cols, bias ? bias[oc] : 0.0);
      const double* wr = w + static_cast<long>(oc) * u.rows;
      for (int r = 0; r < u.rows; ++r) {
        const double wv = wr[r];
        const double* cr = col.get() + r * u.cols;
        for (long m = 0; m < u.cols; ++m) acc[m] += wv * cr[m];
      }
      for (int n = 0; n < g.batch; ++n)
        std::copy(acc.begin() + n * out_plane, acc.begin() + (n + 1) * out_plane,
                  y + (static_cast<long>(n) * g.out_channels + oc) * out_plane);
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, const double* gy, const double* w, double* gx) {
  g.validate();
  const Unfold u = unfold_shape(g);
  const int cog = g.out_per_group();
  std::fill(gx, gx + static_cast<long>(g.batch) * g.in_channels * g.in_h * g.in_w, 0.0);
  const bool inner = g.groups == 1;
#pragma omp parallel for schedule(static) if (!inner)
  for (int grp = 0; grp < g.groups; ++grp) {
    const auto rows = scratch(cog * u.cols), col = scratch(u.rows * u.cols);
    gather_rows(g, gy, grp, rows.get(), inner);
#pragma omp parallel for schedule(static) if (inner)
    for (int r = 0; r < u.rows; ++r) {
      double* cr = col.get() + r * u.cols;
      for (int ocg = 0; ocg < cog; ++ocg) {
        const double wv = w[static_cast<long>(grp * cog + ocg) * u.rows + r];
        const double* gr = rows.get() + ocg * u.cols;
        if (ocg == 0)
          for (long m = 0; m < u.cols; ++m) cr[m] = wv * gr[m];
        else
          for (long m = 0; m < u.cols; ++m) cr[m] += wv * gr[m];
      }
    }
    col2im(g, col.get(), grp, gx, inner);
  }
}

void conv2d_backward_params(const ConvGeometry& g, const double* x, const double* gy, double* gw, double* gb) {
  g.validate();
  const Unfold u = unfold_shape(g);
  const int cog = g.out_per_group();
  const bool inner = g.groups == 1;
#pragma omp parallel for schedule(static) if (!inner)
  for (int grp = 0; grp < g.groups; ++grp) {
    const auto rows = scratch(cog * u.cols), col = scratch(u.rows * u.cols);
    gather_rows(g, gy, grp, rows.get(), inner);
    im2col(g, x, grp, col.get(), inner);
#pragma omp parallel for schedule(static) if (inner)
    for (int ocg = 0; ocg < cog; ++ocg) {
      const int oc = grp * cog + ocg;
      const double* gr = rows.get() + ocg * u.cols;
      if (gb) {
        double acc = 0.0;
        for (long m = 0; m < u.cols; ++m) acc += gr[m];
        gb[oc] += acc;
      }
      double* gwr = gw + static_cast<long>(oc) * u.rows;
      for (int r = 0; r < u.rows; ++r) {
        const double* cr = col.get() + r * u.cols;
        double acc = 0.0;
        for (long m = 0; m < u.cols; ++m) acc += gr[m] * cr[m];
        gwr[r] += acc;
      }
    }
  }
}

namespace {
struct Taps {
  std::vector<int> i0, i1;
  std::vector<double> l0, l1;
};

Taps make_taps(int in) {
  Taps t;
  for (int o = 0; o < 2 * in; ++o) {
    double src = std::max(0.0, (o + 0.5) * 0.5 - 0.5);
    const int a = static_cast<int>(src);
    t.i0.push_back(a);
    t.i1.push_back(a < in - 1 ? a + 1 : a);
    t.l1.push_back(src - a);
    t.l0.push_back(1.0 - (src - a));
  }
  return t;
}
}  // namespace

void upsample2x_forward(int planes, int h, int w, const double* x, double* y) {
  const Taps ty = make_taps(h), tx = make_taps(w);
  const long in_plane = static_cast<long>(h) * w, out_plane = 4L * h * w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* src = x + p * in_plane;
    double* dst = y + p * out_plane;
    for (int oy = 0; oy < 2 * h; ++oy) {
      const double* r0 = src + static_cast<long>(ty.i0[oy]) * w;
      const double* r1 = src + static_cast<long>(ty.i1[oy]) * w;
      const double a = ty.l0[oy], b = ty.l1[oy];
      for (int ox = 0; ox < 2 * w; ++ox)
        dst[static_cast<long>(oy) * 2 * w + ox] = a * (tx.l0[ox] * r0[tx.i0[ox]] + tx.l1[ox] * r0[tx.i1[ox]]) +
                                                  b * (tx.l0[ox] * r1[tx.i0[ox]] + tx.l1[ox] * r1[tx.i1[ox]]);
    }
  }
}

void upsample2x_backward(int planes, int h, int w, const double* gy, double* gx) {
  const Taps ty = make_taps(h), tx = make_taps(w);
  const long in_plane = static_cast<long>(h) * w, out_plane = 4L * h * w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* src = gy + p * out_plane;
    double* dst = gx + p * in_plane;
    std::fill(dst, dst + in_plane, 0.0);
    for (int oy = 0; oy < 2 * h; ++oy) {
      double* r0 = dst + static_cast<long>(ty.i0[oy]) * w;
      double* r1 = dst + static_cast<long>(ty.i1[oy]) * w;
      const double a = ty.l0[oy], b = ty.l1[oy];
      for (int ox = 0; ox < 2 * w; ++ox) {
        const double g = src[static_cast<long>(oy) * 2 * w + ox];
        r0[tx.i0[ox]] += a * tx.l0[ox] * g;
        r0[tx.i1[ox]] += a * tx.l1[ox] * g;
        r1[tx.i0[ox]] += b * tx.l0[ox] * g;
        r1[tx.i1[ox]] += b * tx.l1[ox] * g;
      }
    }
  }
}

}  // namespace kernels::parallel
}  // namespace hamm
