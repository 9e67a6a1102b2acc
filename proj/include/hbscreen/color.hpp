#pragma once

#include "hbscreen/image.hpp"

namespace hbscreen {

// Splits an image into three float planes in the target space.
// RGB is a pass-through (0..255), CIELab is (L, a*, b*), YCbCr is (Y, Cb, Cr)
// on 0..255 with chroma centred at 128, HSV is (H degrees, S, V).
Planes3 convert_color(const ImageRGB8& img, ColorSpaceId target);

// Inverse of convert_color. Out-of-gamut values are clamped; channels are
// rounded to the nearest 8-bit level. Throws DimensionMismatch when the three
// planes disagree in size.
ImageRGB8 convert_back(const Planes3& planes, ColorSpaceId source);

}  // namespace hbscreen
