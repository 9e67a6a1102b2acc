#include <algorithm>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "common.hpp"
#include "hbscreen/kernels.hpp"

namespace hbscreen::kernels {

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace omp {

Planes3 convert_color(const ImageRGB8& img, ColorSpaceId target) {
  const int w = img.width(), h = img.height();
  Planes3 out{PlaneF32(w, h), PlaneF32(w, h), PlaneF32(w, h)};
  const auto src = img.data();
  float* p0 = out[0].data().data();
  float* p1 = out[1].data().data();
  float* p2 = out[2].data().data();
  const long long n = static_cast<long long>(img.pixel_count());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const auto t = detail::forward_pixel(target, src[3 * i], src[3 * i + 1], src[3 * i + 2]);
    p0[i] = static_cast<float>(t[0]);
    p1[i] = static_cast<float>(t[1]);
    p2[i] = static_cast<float>(t[2]);
  }
  return out;
}

ImageRGB8 convert_back(const Planes3& planes, ColorSpaceId source) {
  detail::check_planes(planes);
  ImageRGB8 out(planes[0].width(), planes[0].height());
  std::uint8_t* dst = out.data().data();
  const float* p0 = planes[0].data().data();
  const float* p1 = planes[1].data().data();
  const float* p2 = planes[2].data().data();
  const long long n = static_cast<long long>(planes[0].size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const auto t = detail::inverse_pixel(source, p0[i], p1[i], p2[i]);
    dst[3 * i] = color::to_u8(t[0]);
    dst[3 * i + 1] = color::to_u8(t[1]);
    dst[3 * i + 2] = color::to_u8(t[2]);
  }
  return out;
}

PlaneF32 clahe(const PlaneF32& y, const ClaheConfig& cfg) {
  detail::check_clahe(y, cfg);
  const auto ax = detail::make_tile_axis(y.width(), cfg.tiles_x);
  const auto ay = detail::make_tile_axis(y.height(), cfg.tiles_y);
  const int tiles = cfg.tiles_x * cfg.tiles_y;
  std::vector<std::array<float, 256>> luts(tiles);
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < tiles; ++t) {
    const int tx = t % cfg.tiles_x, ty = t / cfg.tiles_x;
    const auto hist = detail::tile_histogram(y, ax.bounds[tx], ax.bounds[tx + 1], ay.bounds[ty], ay.bounds[ty + 1]);
    const std::int64_t n = static_cast<std::int64_t>(ax.bounds[tx + 1] - ax.bounds[tx]) *
                           (ay.bounds[ty + 1] - ay.bounds[ty]);
    luts[t] = equalization_lut(hist, n, cfg.clip_limit);
  }
  PlaneF32 out(y.width(), y.height());
  const int h = y.height(), w = y.width();
#pragma omp parallel for schedule(static)
  for (int yy = 0; yy < h; ++yy) {
    for (int xx = 0; xx < w; ++xx) {
      out.at(xx, yy) = detail::clahe_pixel(luts, cfg.tiles_x, ax, ay, xx, yy, intensity_bin(y.at(xx, yy)));
    }
  }
  return out;
}

PlaneF32 box_mean(const PlaneF32& plane, int window) {
  detail::check_box_window(window);
  const int w = plane.width(), h = plane.height(), r = window / 2;
  std::vector<double> rows(plane.size());
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += plane.at(detail::clamp_index(x + d, w), y);
      rows[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  PlaneF32 out(w, h);
  const double area = static_cast<double>(window) * window;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += rows[static_cast<std::size_t>(detail::clamp_index(y + d, h)) * w + x];
      out.at(x, y) = static_cast<float>(s / area);
    }
  }
  return out;
}

// Gather formulation: every pixel scans the centres whose window covers it, in
// ascending index order, so ties resolve exactly as in the serial scatter.
void slic_assign(const Planes3& lab, std::span<const SlicCenter> centers, std::span<const SlicWindow> windows,
                 double spacing, double compactness, std::span<std::int32_t> labels, std::span<double> dist2) {
  const int w = lab[0].width(), h = lab[0].height();
  const double scale2 = compactness * compactness / (spacing * spacing);
  const auto L = lab[0].data(), A = lab[1].data(), B = lab[2].data();

  const int bucket = std::max(1, static_cast<int>(std::ceil(spacing)));
  const int bw = (w + bucket - 1) / bucket, bh = (h + bucket - 1) / bucket;
  std::vector<std::vector<std::int32_t>> buckets(static_cast<std::size_t>(bw) * bh);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const auto& win = windows[c];
    if (win.x1 < win.x0 || win.y1 < win.y0) continue;
    for (int by = win.y0 / bucket; by <= win.y1 / bucket; ++by) {
      for (int bx = win.x0 / bucket; bx <= win.x1 / bucket; ++bx) {
        buckets[static_cast<std::size_t>(by) * bw + bx].push_back(static_cast<std::int32_t>(c));
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      double best = labels[i] >= 0 ? slic_distance2(centers[labels[i]], L[i], A[i], B[i], x, y, scale2)
                                   : std::numeric_limits<double>::infinity();
      std::int32_t best_label = labels[i];
      for (const std::int32_t c : buckets[static_cast<std::size_t>(y / bucket) * bw + x / bucket]) {
        const auto& win = windows[c];
        if (x < win.x0 || x > win.x1 || y < win.y0 || y > win.y1) continue;
        const double d = slic_distance2(centers[c], L[i], A[i], B[i], x, y, scale2);
        if (d < best) {
          best = d;
          best_label = c;
        }
      }
      labels[i] = best_label;
      dist2[i] = best;
    }
  }
}

nn::Tensor3 dwsep_conv2d(const nn::Tensor3& input, const nn::DepthwiseKernel& dw, const nn::PointwiseKernel& pw,
                         nn::ConvGeometry g) {
  detail::check_dwsep(input, dw, pw, g);
  const int oh = nn::conv_output_size(input.height(), dw.size, g.stride, g.dilation);
  const int ow = nn::conv_output_size(input.width(), dw.size, g.stride, g.dilation);
  const int channels = input.channels();
  std::vector<double> mid(static_cast<std::size_t>(channels) * oh * ow);
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        mid[(static_cast<std::size_t>(c) * oh + y) * ow + x] = detail::depthwise_at(input, dw, c, y, x, g);
      }
    }
  }
  nn::Tensor3 out(pw.out_channels, oh, ow);
  const int outs = pw.out_channels;
#pragma omp parallel for collapse(2) schedule(static)
  for (int o = 0; o < outs; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = pw.bias[o];
        for (int c = 0; c < channels; ++c) {
          acc += static_cast<double>(pw.weights[static_cast<std::size_t>(o) * channels + c]) *
                 mid[(static_cast<std::size_t>(c) * oh + y) * ow + x];
        }
        out.at(o, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace omp
}  // namespace hbscreen::kernels
