#include "hbscreen/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hbscreen/color_math.hpp"
#include "hbscreen/error.hpp"
#include "hbscreen/kernels.hpp"

namespace hbscreen {

void ClaheConfig::validate() const {
  if (tiles_x < 1 || tiles_y < 1) throw InvalidArgument("clahe: tile counts must be >= 1");
  if (std::isnan(clip_limit) || clip_limit < 1.0) {
    throw InvalidArgument("clahe: clip_limit must be >= 1 (multiple of the uniform bin height)");
  }
}

int intensity_bin(float v) noexcept {
  if (!(v > 0.0f)) return 0;
  if (v >= 255.0f) return 255;
  return std::min(255, static_cast<int>(std::floor(v + 0.5f)));
}

ClippedHistogram clip_histogram(const Histogram& raw, std::int64_t pixels, double clip_limit) {
  ClippedHistogram out;
  out.counts = raw;
  const double ceiling = std::floor(clip_limit * static_cast<double>(pixels) / ClaheConfig::kBins);
  if (!(ceiling < static_cast<double>(pixels))) {
    out.ceiling = pixels;
    return out;
  }
  out.ceiling = std::max<std::int64_t>(1, static_cast<std::int64_t>(ceiling));
  for (auto& c : out.counts) {
    if (c > out.ceiling) {
      out.excess += c - out.ceiling;
      c = out.ceiling;
    }
  }
  const std::int64_t share = out.excess / ClaheConfig::kBins;
  for (auto& c : out.counts) c += share;
  out.counts[0] += out.excess % ClaheConfig::kBins;
  return out;
}

std::array<float, ClaheConfig::kBins> equalization_lut(const Histogram& raw, std::int64_t pixels,
                                                       double clip_limit) {
  std::array<float, ClaheConfig::kBins> lut{};
  const auto occupied = std::count_if(raw.begin(), raw.end(), [](std::int64_t c) { return c > 0; });
  if (occupied <= 1) {
    for (int b = 0; b < ClaheConfig::kBins; ++b) lut[b] = static_cast<float>(b);
    return lut;
  }
  const auto clipped = clip_histogram(raw, pixels, clip_limit);
  std::array<std::int64_t, ClaheConfig::kBins> cdf{};
  std::int64_t run = 0;
  std::int64_t cdf_min = -1;
  for (int b = 0; b < ClaheConfig::kBins; ++b) {
    run += clipped.counts[b];
    cdf[b] = run;
    if (cdf_min < 0 && clipped.counts[b] > 0) cdf_min = run;
  }
  const std::int64_t denom = run - cdf_min;
  if (denom <= 0) {
    for (int b = 0; b < ClaheConfig::kBins; ++b) lut[b] = static_cast<float>(b);
    return lut;
  }
  for (int b = 0; b < ClaheConfig::kBins; ++b) {
    const std::int64_t num = std::max<std::int64_t>(0, cdf[b] - cdf_min) * 255;
    lut[b] = static_cast<float>((2 * num + denom) / (2 * denom));  // round half up
  }
  return lut;
}

PlaneF32 clahe(const PlaneF32& y, const ClaheConfig& cfg) { return kernels::omp::clahe(y, cfg); }

RegionMask adaptive_threshold(const PlaneF32& plane, int window, float offset) {
  const PlaneF32 mean = kernels::omp::box_mean(plane, window);
  RegionMask out(plane.width(), plane.height());
  auto bits = out.bits();
  const auto v = plane.data();
  const auto m = mean.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    bits[i] = static_cast<double>(v[i]) - static_cast<double>(m[i]) > static_cast<double>(offset) ? 1 : 0;
  }
  return out;
}

namespace {

struct Offset {
  int dx, dy;
};

std::span<const Offset> offsets(StructuringElement se) {
  static constexpr Offset kCross[] = {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  static constexpr Offset kSquare[] = {{-1, -1}, {0, -1}, {1, -1}, {-1, 0}, {0, 0},
                                       {1, 0},   {-1, 1}, {0, 1},  {1, 1}};
  if (se == StructuringElement::Cross3) return kCross;
  return kSquare;
}

RegionMask erode_or_dilate(const RegionMask& in, StructuringElement se, bool erode) {
  RegionMask out(in.width(), in.height());
  const auto offs = offsets(se);
  for (int y = 0; y < in.height(); ++y) {
    for (int x = 0; x < in.width(); ++x) {
      bool v = erode;
      for (const auto& o : offs) {
        const int nx = x + o.dx, ny = y + o.dy;
        if (nx < 0 || ny < 0 || nx >= in.width() || ny >= in.height()) continue;
        if (erode && !in.at(nx, ny)) {
          v = false;
          break;
        }
        if (!erode && in.at(nx, ny)) {
          v = true;
          break;
        }
      }
      out.set(x, y, v);
    }
  }
  return out;
}

}  // namespace

RegionMask morph(const RegionMask& mask, MorphOp op, StructuringElement se) {
  switch (op) {
    case MorphOp::Erode: return erode_or_dilate(mask, se, true);
    case MorphOp::Dilate: return erode_or_dilate(mask, se, false);
    case MorphOp::Open: return erode_or_dilate(erode_or_dilate(mask, se, true), se, false);
    case MorphOp::Close: return erode_or_dilate(erode_or_dilate(mask, se, false), se, true);
  }
  return mask;
}

ChannelGains illumination_gains(const ImageRGB8& img, const RegionMask& sclera, double target_white) {
  if (!same_size(img, sclera)) throw DimensionMismatch("correct_illumination: mask and image differ in size");
  if (!(target_white > 0.0)) throw InvalidArgument("correct_illumination: target_white must be positive");
  double sum[3] = {0, 0, 0};
  std::size_t n = 0;
  const auto px = img.data();
  const auto bits = sclera.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!bits[i]) continue;
    for (int c = 0; c < 3; ++c) sum[c] += px[3 * i + c];
    ++n;
  }
  if (n == 0) throw NoReferenceError("correct_illumination: sclera mask is empty", "preprocess");
  auto gain = [&](double s) {
    const double mean = s / static_cast<double>(n);
    if (mean <= 0.0) return kMaxIlluminationGain;
    return std::clamp(target_white / mean, kMinIlluminationGain, kMaxIlluminationGain);
  };
  return {gain(sum[0]), gain(sum[1]), gain(sum[2])};
}

ImageRGB8 correct_illumination(const ImageRGB8& img, const RegionMask& sclera, double target_white) {
  const ChannelGains g = illumination_gains(img, sclera, target_white);
  ImageRGB8 out = img;
  auto px = out.data();
  const double gains[3] = {g.r, g.g, g.b};
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = color::to_u8(px[i] * gains[i % 3]);
  return out;
}

namespace {

void check_unary(const PlaneF32& unary) {
  for (float p : unary.data()) {
    if (!std::isfinite(p) || p < 0.0f || p > 1.0f) {
      throw InvalidArgument("crf_refine: unary probabilities must lie in [0, 1]");
    }
  }
}

double clamp_prob(float p) { return std::clamp(static_cast<double>(p), kProbabilityFloor, 1.0 - kProbabilityFloor); }

double unary_cost(float p, bool fg) {
  const double q = clamp_prob(p);
  return fg ? -std::log(q) : -std::log(1.0 - q);
}

}  // namespace

double crf_energy(const PlaneF32& unary, const RegionMask& labels, double pairwise_weight) {
  if (!same_size(unary, labels)) throw DimensionMismatch("crf_energy: labels and unary differ in size");
  double e = 0.0;
  const int w = unary.width(), h = unary.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool l = labels.at(x, y);
      e += unary_cost(unary.at(x, y), l);
      if (x + 1 < w && labels.at(x + 1, y) != l) e += pairwise_weight;
      if (y + 1 < h && labels.at(x, y + 1) != l) e += pairwise_weight;
    }
  }
  return e;
}

CrfResult crf_refine_traced(const PlaneF32& unary, double pairwise_weight, int max_iters) {
  check_unary(unary);
  if (!(pairwise_weight >= 0.0)) throw InvalidArgument("crf_refine: pairwise weight must be >= 0");
  const int w = unary.width(), h = unary.height();
  RegionMask labels(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) labels.set(x, y, unary_cost(unary.at(x, y), true) < unary_cost(unary.at(x, y), false));
  }
  CrfResult result{labels, 0, {crf_energy(unary, labels, pairwise_weight)}};
  RegionMask& cur = result.mask;
  for (int sweep = 0; sweep < max_iters; ++sweep) {
    int flips = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int fg_neighbours = 0, neighbours = 0;
        const int nx[4] = {x - 1, x + 1, x, x};
        const int ny[4] = {y, y, y - 1, y + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
          ++neighbours;
          fg_neighbours += cur.at(nx[k], ny[k]) ? 1 : 0;
        }
        const double cost_fg = unary_cost(unary.at(x, y), true) + pairwise_weight * (neighbours - fg_neighbours);
        const double cost_bg = unary_cost(unary.at(x, y), false) + pairwise_weight * fg_neighbours;
        const bool next = cost_fg < cost_bg;
        if (next != cur.at(x, y)) {
          cur.set(x, y, next);
          ++flips;
        }
      }
    }
    ++result.sweeps;
    result.energy_trace.push_back(crf_energy(unary, cur, pairwise_weight));
    if (flips == 0) break;
  }
  return result;
}

RegionMask crf_refine(const PlaneF32& unary, double pairwise_weight, int max_iters) {
  return crf_refine_traced(unary, pairwise_weight, max_iters).mask;
}

}  // namespace hbscreen
