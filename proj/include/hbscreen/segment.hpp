#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "hbscreen/image.hpp"

namespace hbscreen {

/// Superpixel labelling; labels are contiguous in [0, k).
class LabelMap {
 public:
  // Validates that every label lies in [0, k) and that each one occurs.
  LabelMap(int width, int height, std::vector<std::int32_t> labels, int k);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int k() const noexcept { return k_; }
  std::span<const std::int32_t> labels() const noexcept { return labels_; }
  std::int32_t at(int x, int y) const noexcept { return labels_[static_cast<std::size_t>(y) * width_ + x]; }

 private:
  int width_;
  int height_;
  std::vector<std::int32_t> labels_;
  int k_;
};

using Lab = std::array<double, 3>;

struct ColorProfile {
  Lab target{};
  double max_distance = 10.0;       // Euclidean in Lab
  double min_area_fraction = 0.01;  // of the whole raster

  void validate() const;
};

struct SlicParams {
  int k = 64;
  double compactness = 10.0;
  int iters = 10;
};

struct SlicResult {
  LabelMap labels;
  // Sum over pixels of the squared SLIC distance after each assignment step.
  std::vector<double> energy_trace;
};

// SLIC superpixels over CIELab planes. Throws InvalidArgument if k exceeds the
// pixel count or is below 1.
SlicResult slic_traced(const Planes3& lab, const SlicParams& params);
LabelMap slic(const Planes3& lab, int k, double compactness, int iters = 10);

// Mean Lab colour per label.
std::vector<Lab> cluster_means(const LabelMap& labels, const Planes3& lab);

double lab_distance(const Lab& a, const Lab& b) noexcept;

struct RoiSelection {
  RegionMask mask;
  bool low_confidence = false;  // union smaller than min_area_fraction; mask is empty
  std::vector<int> clusters;
  double area_fraction = 0.0;
};

// Union of clusters whose mean colour is within max_distance of the profile.
RoiSelection select_roi(const LabelMap& labels, const Planes3& lab, const ColorProfile& profile);

}  // namespace hbscreen
