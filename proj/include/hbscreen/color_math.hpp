#pragma once

// Per-pixel colour conversions shared by the raster kernels and the synthetic
// corpus generator. Conventions: sRGB with D65 white and the 2-degree observer
// for CIELab, full-range BT.601 for YCbCr, H in [0,360) and S,V in [0,1] for
// HSV. RGB inputs/outputs are on the 0..255 scale.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

namespace hbscreen::color {

using Triple = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

inline constexpr Mat3 kRgbToXyz = {{
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
}};

constexpr Mat3 inverse(const Mat3& m) {
  const double a = m[0][0], b = m[0][1], c = m[0][2];
  const double d = m[1][0], e = m[1][1], f = m[1][2];
  const double g = m[2][0], h = m[2][1], i = m[2][2];
  const double A = e * i - f * h, B = -(d * i - f * g), C = d * h - e * g;
  const double det = a * A + b * B + c * C;
  return {{
      {A / det, -(b * i - c * h) / det, (b * f - c * e) / det},
      {B / det, (a * i - c * g) / det, -(a * f - c * d) / det},
      {C / det, -(a * h - b * g) / det, (a * e - b * d) / det},
  }};
}

inline constexpr Mat3 kXyzToRgb = inverse(kRgbToXyz);

// Reference white = XYZ of RGB (1,1,1), so white maps to exactly a* = b* = 0.
inline constexpr Triple kWhite = {
    kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2],
    kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2],
    kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2],
};

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double l) {
  return l <= 0.0031308 ? 12.92 * l : 1.055 * std::pow(l, 1.0 / 2.4) - 0.055;
}

inline double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

inline double lab_f_inv(double ft) {
  constexpr double delta = 6.0 / 29.0;
  return ft > delta ? ft * ft * ft : 3.0 * delta * delta * (ft - 4.0 / 29.0);
}

inline Triple rgb_to_lab(double r, double g, double b) {
  const double lr = srgb_to_linear(r / 255.0);
  const double lg = srgb_to_linear(g / 255.0);
  const double lb = srgb_to_linear(b / 255.0);
  Triple xyz{};
  for (int i = 0; i < 3; ++i) {
    xyz[i] = kRgbToXyz[i][0] * lr + kRgbToXyz[i][1] * lg + kRgbToXyz[i][2] * lb;
  }
  const double fx = lab_f(xyz[0] / kWhite[0]);
  const double fy = lab_f(xyz[1] / kWhite[1]);
  const double fz = lab_f(xyz[2] / kWhite[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline Triple lab_to_rgb(double L, double a, double bb) {
  const double fy = (L + 16.0) / 116.0;
  const double fx = fy + a / 500.0;
  const double fz = fy - bb / 200.0;
  const Triple xyz = {lab_f_inv(fx) * kWhite[0], lab_f_inv(fy) * kWhite[1], lab_f_inv(fz) * kWhite[2]};
  Triple rgb{};
  for (int i = 0; i < 3; ++i) {
    const double lin = kXyzToRgb[i][0] * xyz[0] + kXyzToRgb[i][1] * xyz[1] + kXyzToRgb[i][2] * xyz[2];
    rgb[i] = 255.0 * linear_to_srgb(std::clamp(lin, 0.0, 1.0));
  }
  return rgb;
}

inline Triple rgb_to_ycbcr(double r, double g, double b) {
  return {0.299 * r + 0.587 * g + 0.114 * b,
          128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b,
          128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b};
}

inline Triple ycbcr_to_rgb(double y, double cb, double cr) {
  return {y + 1.402 * (cr - 128.0),
          y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0),
          y + 1.772 * (cb - 128.0)};
}

inline Triple rgb_to_hsv(double r, double g, double b) {
  r /= 255.0;
  g /= 255.0;
  b /= 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0.0;
  if (d > 0.0) {
    if (mx == r) {
      h = 60.0 * ((g - b) / d);
    } else if (mx == g) {
      h = 60.0 * ((b - r) / d + 2.0);
    } else {
      h = 60.0 * ((r - g) / d + 4.0);
    }
    if (h < 0.0) h += 360.0;
    if (h >= 360.0) h -= 360.0;
  }
  const double s = mx > 0.0 ? d / mx : 0.0;
  return {h, s, mx};
}

inline Triple hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0.0) h += 360.0;
  s = std::clamp(s, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {255.0 * (r + m), 255.0 * (g + m), 255.0 * (b + m)};
}

inline std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace hbscreen::color
