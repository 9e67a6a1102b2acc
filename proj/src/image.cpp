#include "hbscreen/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hbscreen/error.hpp"

namespace hbscreen {
namespace {

void check_dims(int width, int height) {
  if (width < 1 || height < 1) {
    throw InvalidArgument("raster dimensions must be >= 1, got " + std::to_string(width) + "x" +
                          std::to_string(height));
  }
}

}  // namespace

ImageRGB8::ImageRGB8(int width, int height) : width_(width), height_(height) {
  check_dims(width, height);
  data_.assign(pixel_count() * 3, 0);
}

ImageRGB8::ImageRGB8(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_dims(width, height);
  if (data_.size() != pixel_count() * 3) {
    throw DimensionMismatch("image buffer holds " + std::to_string(data_.size()) + " bytes, expected " +
                            std::to_string(pixel_count() * 3));
  }
}

PlaneF32::PlaneF32(int width, int height, float fill) : width_(width), height_(height) {
  check_dims(width, height);
  data_.assign(static_cast<std::size_t>(width) * height, fill);
}

PlaneF32::PlaneF32(int width, int height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_dims(width, height);
  if (data_.size() != static_cast<std::size_t>(width) * height) {
    throw DimensionMismatch("plane buffer size does not match dimensions");
  }
  if (!std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); })) {
    throw InvalidArgument("plane values must be finite");
  }
}

RegionMask::RegionMask(int width, int height, bool fill) : width_(width), height_(height) {
  check_dims(width, height);
  bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

RegionMask::RegionMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  check_dims(width, height);
  if (bits_.size() != static_cast<std::size_t>(width) * height) {
    throw DimensionMismatch("mask buffer size does not match dimensions");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t RegionMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::string_view to_string(ColorSpaceId id) noexcept {
  switch (id) {
    case ColorSpaceId::RGB: return "RGB";
    case ColorSpaceId::CIELab: return "CIELab";
    case ColorSpaceId::YCbCr: return "YCbCr";
    case ColorSpaceId::HSV: return "HSV";
  }
  return "?";
}

}  // namespace hbscreen
