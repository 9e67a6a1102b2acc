#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hbscreen/clinical.hpp"
#include "hbscreen/image.hpp"

namespace hbscreen {

inline constexpr int kFeatureLength = 28;
inline constexpr int kFeatureVersion = 1;
inline constexpr int kColourChannels = 12;

// Slot layout: for channel c in R,G,B,L,a,b,Y,Cb,Cr,H,S,V the mean sits at 2c
// and the standard deviation at 2c+1; then R-G, erythema, altitude, age.
namespace slot {
constexpr int mean(int channel) { return 2 * channel; }
constexpr int stddev(int channel) { return 2 * channel + 1; }
inline constexpr int kRedMinusGreen = 24;
inline constexpr int kErythema = 25;
inline constexpr int kAltitudeKm = 26;
inline constexpr int kAgeCenturies = 27;
}  // namespace slot

namespace channel {
inline constexpr int R = 0, G = 1, B = 2, L = 3, A = 4, Bstar = 5, Y = 6, Cb = 7, Cr = 8, H = 9, S = 10, V = 11;
}

struct FeatureMetadata {
  double altitude_m = 0.0;
  double age_years = 0.0;
};

struct FeatureVector {
  std::array<double, kFeatureLength> values{};
  Region region = Region::Nailbed;
  bool valid = false;
  int version = kFeatureVersion;
};

const std::array<std::string, kFeatureLength>& feature_names();

// FNV-1a over the slot names; stored in model bundles to detect layout drift.
std::uint64_t feature_layout_hash();

// Colour statistics over the ROI pixels. Hue is averaged circularly. An empty
// ROI yields valid = false and an all-zero vector. Throws DimensionMismatch
// when the mask and image differ in size.
FeatureVector extract(const ImageRGB8& img, const RegionMask& roi, Region region, const FeatureMetadata& meta);

struct DenseLayer {
  int inputs = 0;
  int outputs = 0;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> bias;     // outputs
};

// Affine+ReLU stack ending in a single linear output.
struct MlpHead {
  std::vector<DenseLayer> layers;
};

// Hb regressed from a bottleneck vector; the output is not clamped.
// Throws DimensionMismatch when the vector or layer chain lengths disagree.
double regress_bottleneck(std::span<const float> bottleneck, const MlpHead& head);

std::string feature_csv_header();
std::string feature_csv_row(const FeatureVector& v);

}  // namespace hbscreen
