#include "hbscreen/segment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "hbscreen/error.hpp"
#include "hbscreen/kernels.hpp"

namespace hbscreen {

LabelMap::LabelMap(int width, int height, std::vector<std::int32_t> labels, int k)
    : width_(width), height_(height), labels_(std::move(labels)), k_(k) {
  if (width < 1 || height < 1) throw InvalidArgument("LabelMap: empty raster");
  if (labels_.size() != static_cast<std::size_t>(width) * height) {
    throw DimensionMismatch("LabelMap: label buffer size does not match dimensions");
  }
  if (k < 1) throw InvalidArgument("LabelMap: k must be >= 1");
  std::vector<char> seen(k, 0);
  for (auto l : labels_) {
    if (l < 0 || l >= k) throw InvalidArgument("LabelMap: label " + std::to_string(l) + " outside [0, k)");
    seen[l] = 1;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw InvalidArgument("LabelMap: some label in [0, k) never occurs");
  }
}

void ColorProfile::validate() const {
  for (double v : target) {
    if (!std::isfinite(v)) throw InvalidArgument("ColorProfile: target must be finite");
  }
  if (target[0] < 0.0 || target[0] > 100.0) throw InvalidArgument("ColorProfile: L must lie in [0, 100]");
  if (!(max_distance > 0.0) || !std::isfinite(max_distance)) {
    throw InvalidArgument("ColorProfile: max_distance must be positive");
  }
  if (!(min_area_fraction > 0.0 && min_area_fraction <= 1.0)) {
    throw InvalidArgument("ColorProfile: min_area_fraction must lie in (0, 1]");
  }
}

double lab_distance(const Lab& a, const Lab& b) noexcept {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
}

namespace {

using kernels::SlicCenter;
using kernels::SlicWindow;

double gradient(const Planes3& lab, int x, int y) {
  const int w = lab[0].width(), h = lab[0].height();
  const int xl = std::max(0, x - 1), xr = std::min(w - 1, x + 1);
  const int yu = std::max(0, y - 1), yd = std::min(h - 1, y + 1);
  double g = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double gx = lab[c].at(xr, y) - lab[c].at(xl, y);
    const double gy = lab[c].at(x, yd) - lab[c].at(x, yu);
    g += gx * gx + gy * gy;
  }
  return g;
}

SlicCenter center_at(const Planes3& lab, double x, double y) {
  const int px = std::clamp(static_cast<int>(std::lround(x)), 0, lab[0].width() - 1);
  const int py = std::clamp(static_cast<int>(std::lround(y)), 0, lab[0].height() - 1);
  return {lab[0].at(px, py), lab[1].at(px, py), lab[2].at(px, py), x, y};
}

std::vector<SlicCenter> seed_centers(const Planes3& lab, double spacing) {
  const int w = lab[0].width(), h = lab[0].height();
  const int nx = std::clamp(static_cast<int>(std::lround(w / spacing)), 1, w);
  const int ny = std::clamp(static_cast<int>(std::lround(h / spacing)), 1, h);
  const double step_x = static_cast<double>(w) / nx, step_y = static_cast<double>(h) / ny;
  std::vector<SlicCenter> centers;
  centers.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      double cx = (i + 0.5) * step_x - 0.5;
      double cy = (j + 0.5) * step_y - 0.5;
      // Move off edges onto the flattest pixel of the 3x3 neighbourhood. Skipped
      // on near-pixel grids where a move would land on a neighbouring seed.
      if (spacing >= 3.0) {
        const int px = std::clamp(static_cast<int>(std::lround(cx)), 0, w - 1);
        const int py = std::clamp(static_cast<int>(std::lround(cy)), 0, h - 1);
        double best = gradient(lab, px, py);
        int bx = -1, by = -1;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int qx = px + dx, qy = py + dy;
            if (qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
            const double g = gradient(lab, qx, qy);
            if (g < best) {
              best = g;
              bx = qx;
              by = qy;
            }
          }
        }
        if (bx >= 0) {
          cx = bx;
          cy = by;
        }
      }
      centers.push_back(center_at(lab, cx, cy));
    }
  }
  return centers;
}

std::vector<SlicWindow> windows_for(std::span<const SlicCenter> centers, double spacing, int w, int h) {
  std::vector<SlicWindow> out;
  out.reserve(centers.size());
  for (const auto& c : centers) out.push_back(kernels::slic_window(c, spacing, w, h));
  return out;
}

// Pixels outside every search window fall back to the globally nearest centre.
void assign_uncovered(const Planes3& lab, std::span<const SlicCenter> centers, double spacing, double compactness,
                      std::span<std::int32_t> labels, std::span<double> dist2) {
  const int w = lab[0].width();
  const double scale2 = compactness * compactness / (spacing * spacing);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) continue;
    const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double d = kernels::slic_distance2(centers[c], lab[0].data()[i], lab[1].data()[i], lab[2].data()[i], x,
                                               y, scale2);
      if (d < best) {
        best = d;
        labels[i] = static_cast<std::int32_t>(c);
      }
    }
    dist2[i] = best;
  }
}

void update_centers(const Planes3& lab, std::span<const std::int32_t> labels, std::vector<SlicCenter>& centers) {
  const int w = lab[0].width();
  std::vector<std::array<double, 6>> acc(centers.size(), {0, 0, 0, 0, 0, 0});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& a = acc[labels[i]];
    a[0] += lab[0].data()[i];
    a[1] += lab[1].data()[i];
    a[2] += lab[2].data()[i];
    a[3] += static_cast<double>(i % w);
    a[4] += static_cast<double>(i / w);
    a[5] += 1.0;
  }
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const auto& a = acc[c];
    if (a[5] == 0.0) continue;
    centers[c] = {a[0] / a[5], a[1] / a[5], a[2] / a[5], a[3] / a[5], a[4] / a[5]};
  }
}

// Splits labels into 4-connected components, merges components smaller than
// min_size into their largest neighbouring component, and compacts the ids.
std::vector<std::int32_t> enforce_connectivity(std::span<const std::int32_t> labels, int w, int h, double min_size,
                                               int& k_out) {
  const std::size_t n = labels.size();
  std::vector<std::int32_t> comp(n, -1);
  std::vector<std::size_t> comp_size;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    const auto id = static_cast<std::int32_t>(comp_size.size());
    std::size_t size = 0;
    comp[s] = id;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
      const std::size_t nb[4] = {p - 1, p + 1, p - w, p + w};
      const bool ok[4] = {x > 0, x + 1 < w, y > 0, y + 1 < h};
      for (int q = 0; q < 4; ++q) {
        if (ok[q] && comp[nb[q]] < 0 && labels[nb[q]] == labels[p]) {
          comp[nb[q]] = id;
          stack.push_back(nb[q]);
        }
      }
    }
    comp_size.push_back(size);
  }

  std::vector<std::vector<std::size_t>> members(comp_size.size());
  for (std::size_t p = 0; p < n; ++p) members[comp[p]].push_back(p);
  std::vector<std::int32_t> parent(comp_size.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::size_t> size = comp_size;

  for (std::size_t c = 0; c < comp_size.size(); ++c) {
    if (parent[c] != static_cast<std::int32_t>(c) || static_cast<double>(size[c]) >= min_size) continue;
    std::int32_t target = -1;
    for (const std::size_t p : members[c]) {
      const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
      const std::size_t nb[4] = {p - 1, p + 1, p - w, p + w};
      const bool ok[4] = {x > 0, x + 1 < w, y > 0, y + 1 < h};
      for (int q = 0; q < 4; ++q) {
        if (!ok[q]) continue;
        const std::int32_t other = parent[comp[nb[q]]];
        if (other == parent[c]) continue;
        if (target < 0 || size[other] > size[target] || (size[other] == size[target] && other < target)) {
          target = other;
        }
      }
    }
    if (target < 0) continue;
    const std::int32_t from = parent[c];
    for (auto& pa : parent) {
      if (pa == from) pa = target;
    }
    size[target] += size[from];
    size[from] = 0;
  }

  std::vector<std::int32_t> remap(comp_size.size(), -1);
  std::vector<std::int32_t> out(n);
  std::int32_t next = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const std::int32_t root = parent[comp[p]];
    if (remap[root] < 0) remap[root] = next++;
    out[p] = remap[root];
  }
  k_out = next;
  return out;
}

}  // namespace

SlicResult slic_traced(const Planes3& lab, const SlicParams& params) {
  if (!same_size(lab[0], lab[1]) || !same_size(lab[0], lab[2])) {
    throw DimensionMismatch("slic: Lab planes differ in size");
  }
  const int w = lab[0].width(), h = lab[0].height();
  const std::size_t n = lab[0].size();
  if (params.k < 1 || static_cast<std::size_t>(params.k) > n) {
    throw InvalidArgument("slic: k = " + std::to_string(params.k) + " must lie in [1, " + std::to_string(n) + "]");
  }
  if (!(params.compactness > 0.0)) throw InvalidArgument("slic: compactness must be positive");
  if (params.iters < 0) throw InvalidArgument("slic: iteration count must be >= 0");

  const double spacing = std::sqrt(static_cast<double>(n) / params.k);
  auto centers = seed_centers(lab, spacing);
  std::vector<std::int32_t> labels(n, -1);
  std::vector<double> dist2(n);
  std::vector<double> trace;

  auto assign = [&] {
    const auto windows = windows_for(centers, spacing, w, h);
    kernels::omp::slic_assign(lab, centers, windows, spacing, params.compactness, labels, dist2);
    assign_uncovered(lab, centers, spacing, params.compactness, labels, dist2);
    trace.push_back(std::accumulate(dist2.begin(), dist2.end(), 0.0));
  };

  assign();
  for (int it = 0; it < params.iters; ++it) {
    update_centers(lab, labels, centers);
    assign();
  }

  int k_out = 0;
  const double min_size = static_cast<double>(n) / params.k / 4.0;
  auto final_labels = enforce_connectivity(labels, w, h, min_size, k_out);
  return {LabelMap(w, h, std::move(final_labels), k_out), std::move(trace)};
}

LabelMap slic(const Planes3& lab, int k, double compactness, int iters) {
  return slic_traced(lab, {k, compactness, iters}).labels;
}

std::vector<Lab> cluster_means(const LabelMap& labels, const Planes3& lab) {
  if (labels.width() != lab[0].width() || labels.height() != lab[0].height()) {
    throw DimensionMismatch("cluster_means: label map and planes differ in size");
  }
  std::vector<Lab> sums(labels.k(), Lab{0, 0, 0});
  std::vector<double> counts(labels.k(), 0.0);
  const auto ls = labels.labels();
  for (std::size_t i = 0; i < ls.size(); ++i) {
    for (int c = 0; c < 3; ++c) sums[ls[i]][c] += lab[c].data()[i];
    counts[ls[i]] += 1.0;
  }
  for (int l = 0; l < labels.k(); ++l) {
    for (int c = 0; c < 3; ++c) sums[l][c] /= counts[l];
  }
  return sums;
}

RoiSelection select_roi(const LabelMap& labels, const Planes3& lab, const ColorProfile& profile) {
  profile.validate();
  const auto means = cluster_means(labels, lab);
  RoiSelection out{RegionMask(labels.width(), labels.height()), false, {}, 0.0};
  std::vector<char> chosen(labels.k(), 0);
  for (int l = 0; l < labels.k(); ++l) {
    if (lab_distance(means[l], profile.target) <= profile.max_distance) {
      chosen[l] = 1;
      out.clusters.push_back(l);
    }
  }
  auto bits = out.mask.bits();
  const auto ls = labels.labels();
  std::size_t area = 0;
  for (std::size_t i = 0; i < ls.size(); ++i) {
    bits[i] = chosen[ls[i]] ? 1 : 0;
    area += bits[i];
  }
  out.area_fraction = static_cast<double>(area) / static_cast<double>(ls.size());
  if (area == 0 || out.area_fraction < profile.min_area_fraction) {
    std::fill(bits.begin(), bits.end(), 0);
    out.low_confidence = true;
  }
  return out;
}

}  // namespace hbscreen
