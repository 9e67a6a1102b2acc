#include "hbscreen/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "hbscreen/color.hpp"
#include "hbscreen/error.hpp"

namespace hbscreen {

const std::array<std::string, kFeatureLength>& feature_names() {
  static const auto names = [] {
    const char* channels[kColourChannels] = {"R", "G", "B", "L", "a", "b", "Y", "Cb", "Cr", "H", "S", "V"};
    std::array<std::string, kFeatureLength> n;
    for (int c = 0; c < kColourChannels; ++c) {
      n[slot::mean(c)] = std::string(channels[c]) + "_mean";
      n[slot::stddev(c)] = std::string(channels[c]) + "_std";
    }
    n[slot::kRedMinusGreen] = "R_minus_G";
    n[slot::kErythema] = "erythema_index";
    n[slot::kAltitudeKm] = "altitude_km";
    n[slot::kAgeCenturies] = "age_centuries";
    return n;
  }();
  return names;
}

std::uint64_t feature_layout_hash() {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& n : feature_names()) {
    for (char c : n) mix(static_cast<unsigned char>(c));
    mix(',');
  }
  mix(static_cast<unsigned char>(kFeatureVersion));
  return h;
}

namespace {


double linear_std(std::span<const double> values, double mean) {
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

}  // namespace

FeatureVector extract(const ImageRGB8& img, const RegionMask& roi, Region region, const FeatureMetadata& meta) {
  if (!same_size(img, roi)) throw DimensionMismatch("extract: ROI mask and image differ in size");
  FeatureVector out;
  out.region = region;
  const std::size_t n = roi.count();
  if (n == 0) return out;

  const Planes3 lab = convert_color(img, ColorSpaceId::CIELab);
  const Planes3 ycc = convert_color(img, ColorSpaceId::YCbCr);
  const Planes3 hsv = convert_color(img, ColorSpaceId::HSV);
  const auto px = img.data();
  const auto bits = roi.bits();

  std::array<std::vector<double>, kColourChannels> values;
  for (auto& v : values) v.reserve(n);
  double erythema = 0.0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!bits[i]) continue;
    const double r = px[3 * i], g = px[3 * i + 1], b = px[3 * i + 2];
    values[channel::R].push_back(r);
    values[channel::G].push_back(g);
    values[channel::B].push_back(b);
    for (int c = 0; c < 3; ++c) {
      values[channel::L + c].push_back(lab[c].data()[i]);
      values[channel::Y + c].push_back(ycc[c].data()[i]);
      values[channel::H + c].push_back(hsv[c].data()[i]);
    }
    erythema += std::log10((r + 1.0) / (g + 1.0));
  }

  const double count = static_cast<double>(n);
  for (int c = 0; c < kColourChannels; ++c) {
    if (c == channel::H) continue;
    double sum = 0.0;
    for (double v : values[c]) sum += v;
    const double mean = sum / count;
    out.values[slot::mean(c)] = mean;
    out.values[slot::stddev(c)] = linear_std(values[c], mean);
  }

  // Circular statistics for hue (degrees).
  constexpr double kDeg = std::numbers::pi / 180.0;
  double sx = 0.0, sy = 0.0;
  for (double h : values[channel::H]) {
    sx += std::cos(h * kDeg);
    sy += std::sin(h * kDeg);
  }
  double mean_angle = std::atan2(sy, sx) / kDeg;
  if (mean_angle < 0.0) mean_angle += 360.0;
  if (mean_angle >= 360.0) mean_angle -= 360.0;
  const double resultant = std::clamp(std::hypot(sx, sy) / count, 1e-12, 1.0);
  out.values[slot::mean(channel::H)] = mean_angle;
  out.values[slot::stddev(channel::H)] = resultant >= 1.0 - 1e-12 ? 0.0 : std::sqrt(-2.0 * std::log(resultant)) / kDeg;

  out.values[slot::kRedMinusGreen] = out.values[slot::mean(channel::R)] - out.values[slot::mean(channel::G)];
  out.values[slot::kErythema] = erythema / count;
  out.values[slot::kAltitudeKm] = meta.altitude_m / 1000.0;
  out.values[slot::kAgeCenturies] = meta.age_years / 100.0;
  out.valid = true;
  return out;
}

double regress_bottleneck(std::span<const float> bottleneck, const MlpHead& head) {
  if (head.layers.empty()) throw InvalidArgument("regress_bottleneck: head has no layers");
  std::vector<double> cur(bottleneck.begin(), bottleneck.end());
  for (std::size_t li = 0; li < head.layers.size(); ++li) {
    const DenseLayer& l = head.layers[li];
    if (static_cast<std::size_t>(l.inputs) != cur.size()) {
      throw DimensionMismatch("regress_bottleneck: layer " + std::to_string(li) + " expects " +
                              std::to_string(l.inputs) + " inputs, got " + std::to_string(cur.size()));
    }
    if (l.weights.size() != static_cast<std::size_t>(l.inputs) * l.outputs ||
        l.bias.size() != static_cast<std::size_t>(l.outputs)) {
      throw DimensionMismatch("regress_bottleneck: layer " + std::to_string(li) + " weight shape mismatch");
    }
    std::vector<double> next(l.outputs);
    for (int o = 0; o < l.outputs; ++o) {
      double acc = l.bias[o];
      for (int i = 0; i < l.inputs; ++i) acc += l.weights[static_cast<std::size_t>(o) * l.inputs + i] * cur[i];
      next[o] = (li + 1 < head.layers.size()) ? std::max(0.0, acc) : acc;
    }
    cur = std::move(next);
  }
  if (cur.size() != 1) throw DimensionMismatch("regress_bottleneck: head must end in a single output");
  return cur[0];
}

std::string feature_csv_header() {
  std::string h = "region,valid";
  for (const auto& n : feature_names()) h += "," + n;
  return h;
}

std::string feature_csv_row(const FeatureVector& v) {
  std::ostringstream os;
  os.precision(17);
  os << to_string(v.region) << ',' << (v.valid ? 1 : 0);
  for (double x : v.values) os << ',' << x;
  return os.str();
}

}  // namespace hbscreen
