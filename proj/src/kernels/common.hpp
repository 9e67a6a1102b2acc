#pragma once

// Helpers shared by the serial and OpenMP kernel variants. Anything that
// affects numerical results lives here so both variants use identical
// arithmetic.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "hbscreen/color_math.hpp"
#include "hbscreen/error.hpp"
#include "hbscreen/image.hpp"
#include "hbscreen/nn.hpp"
#include "hbscreen/preprocess.hpp"

namespace hbscreen::kernels::detail {

inline color::Triple forward_pixel(ColorSpaceId space, double r, double g, double b) {
  switch (space) {
    case ColorSpaceId::RGB: return {r, g, b};
    case ColorSpaceId::CIELab: return color::rgb_to_lab(r, g, b);
    case ColorSpaceId::YCbCr: return color::rgb_to_ycbcr(r, g, b);
    case ColorSpaceId::HSV: return color::rgb_to_hsv(r, g, b);
  }
  return {r, g, b};
}

inline color::Triple inverse_pixel(ColorSpaceId space, double c0, double c1, double c2) {
  switch (space) {
    case ColorSpaceId::RGB: return {c0, c1, c2};
    case ColorSpaceId::CIELab: return color::lab_to_rgb(c0, c1, c2);
    case ColorSpaceId::YCbCr: return color::ycbcr_to_rgb(c0, c1, c2);
    case ColorSpaceId::HSV: return color::hsv_to_rgb(c0, c1, c2);
  }
  return {c0, c1, c2};
}

inline void check_planes(const Planes3& planes) {
  if (!same_size(planes[0], planes[1]) || !same_size(planes[0], planes[2])) {
    throw DimensionMismatch("convert_back: the three planes differ in size");
  }
}

// Per-coordinate interpolation data along one axis of the CLAHE tile grid.
struct TileAxis {
  std::vector<int> bounds;  // tiles + 1 pixel boundaries
  std::vector<int> lo;      // per coordinate: tile on the low side
  std::vector<int> hi;      // per coordinate: tile on the high side
  std::vector<double> t;    // weight of `hi`
};

inline TileAxis make_tile_axis(int length, int tiles) {
  TileAxis axis;
  axis.bounds.resize(tiles + 1);
  for (int i = 0; i <= tiles; ++i) axis.bounds[i] = static_cast<int>(static_cast<long long>(i) * length / tiles);
  std::vector<double> centre(tiles);
  for (int i = 0; i < tiles; ++i) centre[i] = (axis.bounds[i] + axis.bounds[i + 1] - 1) / 2.0;
  axis.lo.resize(length);
  axis.hi.resize(length);
  axis.t.resize(length);
  int cur = 0;
  for (int p = 0; p < length; ++p) {
    if (p <= centre.front()) {
      axis.lo[p] = axis.hi[p] = 0;
      axis.t[p] = 0.0;
    } else if (p >= centre.back()) {
      axis.lo[p] = axis.hi[p] = tiles - 1;
      axis.t[p] = 0.0;
    } else {
      while (centre[cur + 1] <= p) ++cur;
      axis.lo[p] = cur;
      axis.hi[p] = cur + 1;
      axis.t[p] = (p - centre[cur]) / (centre[cur + 1] - centre[cur]);
    }
  }
  return axis;
}

inline void check_clahe(const PlaneF32& y, const ClaheConfig& cfg) {
  cfg.validate();
  if (y.width() < 2 * cfg.tiles_x || y.height() < 2 * cfg.tiles_y) {
    throw InvalidArgument("clahe: " + std::to_string(cfg.tiles_x) + "x" + std::to_string(cfg.tiles_y) +
                          " tile grid is too large for a " + std::to_string(y.width()) + "x" +
                          std::to_string(y.height()) + " plane (tiles must be at least 2x2)");
  }
}

inline Histogram tile_histogram(const PlaneF32& y, int x0, int x1, int y0, int y1) {
  Histogram h{};
  for (int yy = y0; yy < y1; ++yy) {
    for (int xx = x0; xx < x1; ++xx) ++h[intensity_bin(y.at(xx, yy))];
  }
  return h;
}

inline double lerp(double a, double b, double t) { return a + t * (b - a); }

inline float clahe_pixel(const std::vector<std::array<float, 256>>& luts, int tiles_x, const TileAxis& ax,
                         const TileAxis& ay, int x, int y, int bin) {
  const double tl = luts[ay.lo[y] * tiles_x + ax.lo[x]][bin];
  const double tr = luts[ay.lo[y] * tiles_x + ax.hi[x]][bin];
  const double bl = luts[ay.hi[y] * tiles_x + ax.lo[x]][bin];
  const double br = luts[ay.hi[y] * tiles_x + ax.hi[x]][bin];
  const double top = lerp(tl, tr, ax.t[x]);
  const double bottom = lerp(bl, br, ax.t[x]);
  return static_cast<float>(lerp(top, bottom, ay.t[y]));
}

inline void check_box_window(int window) {
  if (window < 3 || window % 2 == 0) {
    throw InvalidArgument("adaptive_threshold: window must be odd and >= 3, got " + std::to_string(window));
  }
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

inline void check_dwsep(const nn::Tensor3& input, const nn::DepthwiseKernel& dw, const nn::PointwiseKernel& pw,
                        nn::ConvGeometry g) {
  if (dw.size < 1 || dw.size % 2 == 0) throw InvalidArgument("dwsep_conv2d: kernel size must be odd");
  if (g.stride < 1 || g.dilation < 1) throw InvalidArgument("dwsep_conv2d: stride and dilation must be >= 1");
  if (dw.channels != input.channels()) {
    throw DimensionMismatch("dwsep_conv2d: depthwise kernel has " + std::to_string(dw.channels) +
                            " channels, input has " + std::to_string(input.channels()));
  }
  if (dw.weights.size() != static_cast<std::size_t>(dw.channels) * dw.size * dw.size ||
      dw.bias.size() != static_cast<std::size_t>(dw.channels)) {
    throw DimensionMismatch("dwsep_conv2d: depthwise weight/bias length mismatch");
  }
  if (pw.in_channels != input.channels()) {
    throw DimensionMismatch("dwsep_conv2d: pointwise kernel expects " + std::to_string(pw.in_channels) +
                            " channels, input has " + std::to_string(input.channels()));
  }
  if (pw.out_channels < 1 ||
      pw.weights.size() != static_cast<std::size_t>(pw.out_channels) * pw.in_channels ||
      pw.bias.size() != static_cast<std::size_t>(pw.out_channels)) {
    throw DimensionMismatch("dwsep_conv2d: pointwise weight/bias length mismatch");
  }
  if (nn::conv_output_size(input.height(), dw.size, g.stride, g.dilation) < 1 ||
      nn::conv_output_size(input.width(), dw.size, g.stride, g.dilation) < 1) {
    throw InvalidArgument("dwsep_conv2d: input too small for kernel");
  }
}

inline double depthwise_at(const nn::Tensor3& in, const nn::DepthwiseKernel& dw, int c, int oy, int ox,
                           nn::ConvGeometry g) {
  const int k = dw.size;
  const int pad = g.dilation * (k - 1) / 2;
  double acc = dw.bias[c];
  for (int ky = 0; ky < k; ++ky) {
    const int iy = oy * g.stride - pad + ky * g.dilation;
    if (iy < 0 || iy >= in.height()) continue;
    for (int kx = 0; kx < k; ++kx) {
      const int ix = ox * g.stride - pad + kx * g.dilation;
      if (ix < 0 || ix >= in.width()) continue;
      acc += static_cast<double>(dw.weights[(static_cast<std::size_t>(c) * k + ky) * k + kx]) * in.at(c, iy, ix);
    }
  }
  return acc;
}

}  // namespace hbscreen::kernels::detail
