#include "hbscreen/geometry.hpp"

#include <cmath>

#include "hbscreen/color_math.hpp"
#include "hbscreen/error.hpp"

namespace hbscreen {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

ImageRGB8 flip_h(const ImageRGB8& img) {
  ImageRGB8 out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) out.set(img.width() - 1 - x, y, img.at(x, y));
  }
  return out;
}

ImageRGB8 flip_v(const ImageRGB8& img) {
  ImageRGB8 out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) out.set(x, img.height() - 1 - y, img.at(x, y));
  }
  return out;
}

ImageRGB8 rot90(const ImageRGB8& img) {
  ImageRGB8 out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) out.set(img.height() - 1 - y, x, img.at(x, y));
  }
  return out;
}

ImageRGB8 affine(const ImageRGB8& img, const Affine& op) {
  const auto& m = op.m;
  const double det = m[0] * m[4] - m[1] * m[3];
  if (!std::isfinite(det) || std::fabs(det) < 1e-12) {
    throw InvalidArgument("transform_geometric: affine matrix is singular");
  }
  // Inverse of the linear part.
  const double i00 = m[4] / det, i01 = -m[1] / det;
  const double i10 = -m[3] / det, i11 = m[0] / det;
  const int w = img.width(), h = img.height();
  ImageRGB8 out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x - m[2], dy = y - m[5];
      const double sx = std::clamp(i00 * dx + i01 * dy, 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(i10 * dx + i11 * dy, 0.0, static_cast<double>(h - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - x0, fy = sy - y0;
      const Rgb p00 = img.at(x0, y0), p10 = img.at(x1, y0), p01 = img.at(x0, y1), p11 = img.at(x1, y1);
      auto sample = [&](double a, double b, double c, double d) {
        const double top = a + fx * (b - a);
        const double bottom = c + fx * (d - c);
        return color::to_u8(top + fy * (bottom - top));
      };
      out.set(x, y,
              {sample(p00.r, p10.r, p01.r, p11.r), sample(p00.g, p10.g, p01.g, p11.g),
               sample(p00.b, p10.b, p01.b, p11.b)});
    }
  }
  return out;
}

}  // namespace

ImageRGB8 transform_geometric(const ImageRGB8& img, const GeometricOp& op) {
  return std::visit(Overloaded{
                        [&](const FlipH&) { return flip_h(img); },
                        [&](const FlipV&) { return flip_v(img); },
                        [&](const Rot90&) { return rot90(img); },
                        [&](const Affine& a) { return affine(img, a); },
                    },
                    op);
}

}  // namespace hbscreen
