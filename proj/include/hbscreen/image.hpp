#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace hbscreen {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Decoded 8-bit sRGB raster, row-major interleaved R,G,B.
class ImageRGB8 {
 public:
  ImageRGB8(int width, int height);
  ImageRGB8(int width, int height, std::vector<std::uint8_t> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  Rgb at(int x, int y) const noexcept {
    const std::uint8_t* p = &data_[offset(x, y)];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) noexcept {
    std::uint8_t* p = &data_[offset(x, y)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  friend bool operator==(const ImageRGB8&, const ImageRGB8&) = default;

 private:
  std::size_t offset(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * 3;
  }

  int width_;
  int height_;
  std::vector<std::uint8_t> data_;
};

/// Single-channel float raster.
class PlaneF32 {
 public:
  PlaneF32(int width, int height, float fill = 0.0f);
  PlaneF32(int width, int height, std::vector<float> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  float at(int x, int y) const noexcept { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float& at(int x, int y) noexcept { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  friend bool operator==(const PlaneF32&, const PlaneF32&) = default;

 private:
  int width_;
  int height_;
  std::vector<float> data_;
};

using Planes3 = std::array<PlaneF32, 3>;

/// Binary mask, one byte per pixel holding 0 or 1.
class RegionMask {
 public:
  RegionMask(int width, int height, bool fill = false);
  RegionMask(int width, int height, std::vector<std::uint8_t> bits);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return bits_.size(); }

  bool at(int x, int y) const noexcept { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) noexcept {
    bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0;
  }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::span<std::uint8_t> bits() noexcept { return bits_; }

  std::size_t count() const noexcept;
  bool empty() const noexcept { return count() == 0; }

  friend bool operator==(const RegionMask&, const RegionMask&) = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
};

enum class ColorSpaceId { RGB, CIELab, YCbCr, HSV };

std::string_view to_string(ColorSpaceId id) noexcept;

template <typename A, typename B>
bool same_size(const A& a, const B& b) noexcept {
  return a.width() == b.width() && a.height() == b.height();
}

}  // namespace hbscreen
