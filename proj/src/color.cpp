#include "hbscreen/color.hpp"

#include "hbscreen/kernels.hpp"

namespace hbscreen {

Planes3 convert_color(const ImageRGB8& img, ColorSpaceId target) { return kernels::omp::convert_color(img, target); }

ImageRGB8 convert_back(const Planes3& planes, ColorSpaceId source) {
  return kernels::omp::convert_back(planes, source);
}

}  // namespace hbscreen
