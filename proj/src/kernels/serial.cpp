#include <algorithm>
#include <limits>

#include "common.hpp"
#include "hbscreen/kernels.hpp"

namespace hbscreen::kernels {

SlicWindow slic_window(const SlicCenter& c, double spacing, int width, int height) noexcept {
  SlicWindow w;
  w.x0 = std::max(0, static_cast<int>(std::ceil(c.x - spacing)));
  w.x1 = std::min(width - 1, static_cast<int>(std::floor(c.x + spacing)));
  w.y0 = std::max(0, static_cast<int>(std::ceil(c.y - spacing)));
  w.y1 = std::min(height - 1, static_cast<int>(std::floor(c.y + spacing)));
  return w;
}

namespace serial {

Planes3 convert_color(const ImageRGB8& img, ColorSpaceId target) {
  const int w = img.width(), h = img.height();
  Planes3 out{PlaneF32(w, h), PlaneF32(w, h), PlaneF32(w, h)};
  const auto src = img.data();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const auto t = detail::forward_pixel(target, src[3 * i], src[3 * i + 1], src[3 * i + 2]);
    for (int c = 0; c < 3; ++c) out[c].data()[i] = static_cast<float>(t[c]);
  }
  return out;
}

ImageRGB8 convert_back(const Planes3& planes, ColorSpaceId source) {
  detail::check_planes(planes);
  ImageRGB8 out(planes[0].width(), planes[0].height());
  auto dst = out.data();
  for (std::size_t i = 0; i < planes[0].size(); ++i) {
    const auto t = detail::inverse_pixel(source, planes[0].data()[i], planes[1].data()[i], planes[2].data()[i]);
    for (int c = 0; c < 3; ++c) dst[3 * i + c] = color::to_u8(t[c]);
  }
  return out;
}

PlaneF32 clahe(const PlaneF32& y, const ClaheConfig& cfg) {
  detail::check_clahe(y, cfg);
  const auto ax = detail::make_tile_axis(y.width(), cfg.tiles_x);
  const auto ay = detail::make_tile_axis(y.height(), cfg.tiles_y);
  std::vector<std::array<float, 256>> luts(static_cast<std::size_t>(cfg.tiles_x) * cfg.tiles_y);
  for (int ty = 0; ty < cfg.tiles_y; ++ty) {
    for (int tx = 0; tx < cfg.tiles_x; ++tx) {
      const auto hist = detail::tile_histogram(y, ax.bounds[tx], ax.bounds[tx + 1], ay.bounds[ty], ay.bounds[ty + 1]);
      const std::int64_t n = static_cast<std::int64_t>(ax.bounds[tx + 1] - ax.bounds[tx]) *
                             (ay.bounds[ty + 1] - ay.bounds[ty]);
      luts[ty * cfg.tiles_x + tx] = equalization_lut(hist, n, cfg.clip_limit);
    }
  }
  PlaneF32 out(y.width(), y.height());
  for (int yy = 0; yy < y.height(); ++yy) {
    for (int xx = 0; xx < y.width(); ++xx) {
      out.at(xx, yy) = detail::clahe_pixel(luts, cfg.tiles_x, ax, ay, xx, yy, intensity_bin(y.at(xx, yy)));
    }
  }
  return out;
}

PlaneF32 box_mean(const PlaneF32& plane, int window) {
  detail::check_box_window(window);
  const int w = plane.width(), h = plane.height(), r = window / 2;
  std::vector<double> rows(plane.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += plane.at(detail::clamp_index(x + d, w), y);
      rows[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  PlaneF32 out(w, h);
  const double area = static_cast<double>(window) * window;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += rows[static_cast<std::size_t>(detail::clamp_index(y + d, h)) * w + x];
      out.at(x, y) = static_cast<float>(s / area);
    }
  }
  return out;
}

void slic_assign(const Planes3& lab, std::span<const SlicCenter> centers, std::span<const SlicWindow> windows,
                 double spacing, double compactness, std::span<std::int32_t> labels, std::span<double> dist2) {
  const int w = lab[0].width(), h = lab[0].height();
  const double scale2 = compactness * compactness / (spacing * spacing);
  const auto L = lab[0].data(), A = lab[1].data(), B = lab[2].data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      dist2[i] = labels[i] >= 0 ? slic_distance2(centers[labels[i]], L[i], A[i], B[i], x, y, scale2)
                                : std::numeric_limits<double>::infinity();
    }
  }
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const auto& win = windows[c];
    for (int y = win.y0; y <= win.y1; ++y) {
      for (int x = win.x0; x <= win.x1; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const double d = slic_distance2(centers[c], L[i], A[i], B[i], x, y, scale2);
        if (d < dist2[i]) {
          dist2[i] = d;
          labels[i] = static_cast<std::int32_t>(c);
        }
      }
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
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        mid[(static_cast<std::size_t>(c) * oh + y) * ow + x] = detail::depthwise_at(input, dw, c, y, x, g);
      }
    }
  }
  nn::Tensor3 out(pw.out_channels, oh, ow);
  for (int o = 0; o < pw.out_channels; ++o) {
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

}  // namespace serial
}  // namespace hbscreen::kernels
