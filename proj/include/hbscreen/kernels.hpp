#pragma once

// Data-parallel hot loops. Every kernel has a plain serial reference in
// `kernels::serial` and an OpenMP version in `kernels::omp`; the two must agree
// bit-for-bit, which tests/unit/test_kernels.cpp checks. Public module
// functions call the OpenMP versions.

#include <cstdint>
#include <span>

#include "hbscreen/image.hpp"
#include "hbscreen/nn.hpp"
#include "hbscreen/preprocess.hpp"

namespace hbscreen::kernels {

struct SlicCenter {
  double l = 0, a = 0, b = 0;
  double x = 0, y = 0;
};

// Inclusive pixel bounds of a centre's 2S x 2S search window.
struct SlicWindow {
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

SlicWindow slic_window(const SlicCenter& c, double spacing, int width, int height) noexcept;

inline double slic_distance2(const SlicCenter& c, double l, double a, double b, double x, double y,
                             double spatial_scale2) noexcept {
  const double dl = l - c.l, da = a - c.a, db = b - c.b;
  const double dx = x - c.x, dy = y - c.y;
  return dl * dl + da * da + db * db + (dx * dx + dy * dy) * spatial_scale2;
}

namespace serial {
Planes3 convert_color(const ImageRGB8& img, ColorSpaceId target);
ImageRGB8 convert_back(const Planes3& planes, ColorSpaceId source);
PlaneF32 clahe(const PlaneF32& y, const ClaheConfig& cfg);
// Edge-clamped mean over a window x window neighbourhood.
PlaneF32 box_mean(const PlaneF32& plane, int window);
// `labels` holds the previous assignment (-1 = none) and receives the new one;
// a pixel keeps its previous centre unless a windowed centre is strictly closer.
void slic_assign(const Planes3& lab, std::span<const SlicCenter> centers,
                 std::span<const SlicWindow> windows, double spacing, double compactness,
                 std::span<std::int32_t> labels, std::span<double> dist2);
nn::Tensor3 dwsep_conv2d(const nn::Tensor3& input, const nn::DepthwiseKernel& depthwise,
                         const nn::PointwiseKernel& pointwise, nn::ConvGeometry geometry);
}  // namespace serial

namespace omp {
Planes3 convert_color(const ImageRGB8& img, ColorSpaceId target);
ImageRGB8 convert_back(const Planes3& planes, ColorSpaceId source);
PlaneF32 clahe(const PlaneF32& y, const ClaheConfig& cfg);
PlaneF32 box_mean(const PlaneF32& plane, int window);
void slic_assign(const Planes3& lab, std::span<const SlicCenter> centers,
                 std::span<const SlicWindow> windows, double spacing, double compactness,
                 std::span<std::int32_t> labels, std::span<double> dist2);
nn::Tensor3 dwsep_conv2d(const nn::Tensor3& input, const nn::DepthwiseKernel& depthwise,
                         const nn::PointwiseKernel& pointwise, nn::ConvGeometry geometry);
}  // namespace omp

// Number of threads the OpenMP kernels will use (1 when built without OpenMP).
int max_threads() noexcept;

}  // namespace hbscreen::kernels
