#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "hbscreen/image.hpp"

namespace hbscreen {

struct ClaheConfig {
  static constexpr int kBins = 256;

  int tiles_x = 8;
  int tiles_y = 8;
  // Ceiling as a multiple of the uniform bin height (tile pixels / 256).
  // +infinity disables clipping.
  double clip_limit = 4.0;

  void validate() const;
};

using Histogram = std::array<std::int64_t, ClaheConfig::kBins>;

struct ClippedHistogram {
  Histogram counts{};
  std::int64_t ceiling = 0;
  std::int64_t excess = 0;
};

// Intensity level used for histogramming: round-to-nearest, clamped to 0..255.
int intensity_bin(float v) noexcept;

// Removes counts above the ceiling and spreads them once over all bins,
// remainder to bin 0.
ClippedHistogram clip_histogram(const Histogram& raw, std::int64_t pixels, double clip_limit);

// Tile mapping from a raw histogram. A histogram with a single occupied bin maps
// to the identity; otherwise the clipped CDF is stretched onto 0..255.
std::array<float, ClaheConfig::kBins> equalization_lut(const Histogram& raw, std::int64_t pixels,
                                                       double clip_limit);

// Contrast-limited adaptive histogram equalization of a 0..255 plane.
// Throws InvalidArgument when a tile would be smaller than 2x2.
PlaneF32 clahe(const PlaneF32& y, const ClaheConfig& cfg);

// Pixel is foreground iff value - (edge-clamped window mean) > offset.
// Throws InvalidArgument for an even window or one below 3.
RegionMask adaptive_threshold(const PlaneF32& plane, int window, float offset);

enum class MorphOp { Erode, Dilate, Open, Close };
enum class StructuringElement { Cross3, Square3 };

// Binary morphology. Out-of-bounds neighbours are ignored, which keeps erosion
// and dilation adjoint so open/close stay idempotent at the borders.
RegionMask morph(const RegionMask& mask, MorphOp op, StructuringElement se);

struct ChannelGains {
  double r = 1.0;
  double g = 1.0;
  double b = 1.0;
};

inline constexpr double kDefaultTargetWhite = 230.0;
inline constexpr double kMinIlluminationGain = 0.5;
inline constexpr double kMaxIlluminationGain = 2.0;

// Per-channel gains target_white / mean(sclera), each clamped to [0.5, 2].
// Throws NoReferenceError on an empty sclera mask.
ChannelGains illumination_gains(const ImageRGB8& img, const RegionMask& sclera,
                                double target_white = kDefaultTargetWhite);

ImageRGB8 correct_illumination(const ImageRGB8& img, const RegionMask& sclera,
                               double target_white = kDefaultTargetWhite);

inline constexpr double kProbabilityFloor = 1e-6;

// Energy of a binary labelling under the 4-neighbour Potts model used by crf_refine.
double crf_energy(const PlaneF32& unary, const RegionMask& labels, double pairwise_weight);

struct CrfResult {
  RegionMask mask;
  int sweeps = 0;
  std::vector<double> energy_trace;  // initial energy, then after each sweep
};

// Iterated conditional modes on a binary Potts CRF, raster-scan order.
CrfResult crf_refine_traced(const PlaneF32& unary, double pairwise_weight, int max_iters);
RegionMask crf_refine(const PlaneF32& unary, double pairwise_weight, int max_iters);

}  // namespace hbscreen
