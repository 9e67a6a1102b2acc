#include "hbscreen/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <string>

#include "hbscreen/error.hpp"
#include "hbscreen/kernels.hpp"

namespace hbscreen::nn {

Tensor3::Tensor3(int channels, int height, int width, float fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 1 || height < 1 || width < 1) throw InvalidArgument("Tensor3: dimensions must be >= 1");
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Tensor3::Tensor3(int channels, int height, int width, std::vector<float> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
  if (channels < 1 || height < 1 || width < 1) throw InvalidArgument("Tensor3: dimensions must be >= 1");
  if (data_.size() != static_cast<std::size_t>(channels) * height * width) {
    throw DimensionMismatch("Tensor3: buffer size does not match shape");
  }
  if (!std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); })) {
    throw InvalidArgument("Tensor3: values must be finite");
  }
}

int conv_output_size(int input, int kernel, int stride, int dilation) noexcept {
  const int pad = dilation * (kernel - 1) / 2;
  const int span = input + 2 * pad - dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}

Tensor3 dwsep_conv2d(const Tensor3& input, const DepthwiseKernel& depthwise, const PointwiseKernel& pointwise,
                     ConvGeometry geometry) {
  return kernels::omp::dwsep_conv2d(input, depthwise, pointwise, geometry);
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t conv_weight_count(int in_channels, const DwSepConvLayer& l) {
  const auto c = static_cast<std::size_t>(in_channels);
  const auto o = static_cast<std::size_t>(l.out_channels);
  return c * l.kernel * l.kernel + c + o * c + o;
}

[[noreturn]] void layer_error(std::size_t index, const std::string& what) {
  throw InvalidArgument("network layer " + std::to_string(index) + ": " + what);
}

}  // namespace

std::size_t NetSpec::expected_weight_count() const {
  std::size_t total = 0;
  int channels = input.channels;
  std::vector<int> out_channels;
  for (const auto& layer : layers) {
    std::visit(Overloaded{
                   [&](const DwSepConvLayer& l) {
                     total += conv_weight_count(channels, l);
                     channels = l.out_channels;
                   },
                   [&](const SkipConcat& s) {
                     if (s.source >= 0 && static_cast<std::size_t>(s.source) < out_channels.size()) {
                       channels += out_channels[s.source];
                     } else if (s.source == -1) {
                       channels += input.channels;
                     }
                   },
                   [&](const auto&) {},
               },
               layer);
    out_channels.push_back(channels);
  }
  return total;
}

std::vector<Shape> NetSpec::validate() const {
  if (input.channels < 1 || input.height < 1 || input.width < 1) {
    throw InvalidArgument("network input shape must be positive");
  }
  if (layers.empty()) throw InvalidArgument("network has no layers");
  std::vector<Shape> shapes;
  Shape cur = input;
  int depth = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::visit(Overloaded{
                   [&](const DwSepConvLayer& l) {
                     if (l.out_channels < 1) layer_error(i, "conv needs at least one output channel");
                     if (l.kernel < 1 || l.kernel % 2 == 0) layer_error(i, "conv kernel must be odd");
                     if (l.stride < 1 || l.dilation < 1) layer_error(i, "conv stride/dilation must be >= 1");
                     const int h = conv_output_size(cur.height, l.kernel, l.stride, l.dilation);
                     const int w = conv_output_size(cur.width, l.kernel, l.stride, l.dilation);
                     if (h < 1 || w < 1) layer_error(i, "conv output would be empty");
                     cur = {l.out_channels, h, w};
                   },
                   [&](const Downsample2x&) {
                     if (cur.height < 2 || cur.width < 2) layer_error(i, "cannot downsample below 1 pixel");
                     cur = {cur.channels, cur.height / 2, cur.width / 2};
                     ++depth;
                   },
                   [&](const Upsample2x&) {
                     cur = {cur.channels, cur.height * 2, cur.width * 2};
                     --depth;
                     if (depth < 0) layer_error(i, "more upsampling than downsampling");
                   },
                   [&](const SkipConcat& s) {
                     if (s.source < -1 || s.source >= static_cast<int>(i)) {
                       layer_error(i, "skip source must reference an earlier layer");
                     }
                     const Shape src = s.source == -1 ? input : shapes[s.source];
                     if (src.height != cur.height || src.width != cur.width) {
                       layer_error(i, "skip source " + std::to_string(s.source) + " is " + std::to_string(src.height) +
                                          "x" + std::to_string(src.width) + ", current tensor is " +
                                          std::to_string(cur.height) + "x" + std::to_string(cur.width));
                     }
                     cur.channels += src.channels;
                   },
                   [&](const SigmoidHead&) {
                     if (cur.channels != 1) layer_error(i, "sigmoid head needs a single-channel input");
                     if (i + 1 != layers.size()) layer_error(i, "sigmoid head must be the last layer");
                   },
               },
               layers[i]);
    shapes.push_back(cur);
  }
  const std::size_t last = layers.size() - 1;
  if (!std::holds_alternative<SigmoidHead>(layers[last])) layer_error(last, "network must end in a sigmoid head");
  if (depth != 0) layer_error(last, "encoder and decoder depths differ");
  if (cur.height != input.height || cur.width != input.width) {
    layer_error(last, "output spatial size differs from input");
  }
  if (bottleneck < -1 || bottleneck >= static_cast<int>(layers.size())) {
    throw InvalidArgument("bottleneck index out of range");
  }
  if (weights.size() != expected_weight_count()) {
    throw InvalidArgument("weight blob holds " + std::to_string(weights.size()) + " values, layers need " +
                          std::to_string(expected_weight_count()));
  }
  return shapes;
}

namespace {

Tensor3 downsample(const Tensor3& in) {
  Tensor3 out(in.channels(), in.height() / 2, in.width() / 2);
  for (int c = 0; c < out.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) {
        out.at(c, y, x) = (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) + in.at(c, 2 * y + 1, 2 * x) +
                           in.at(c, 2 * y + 1, 2 * x + 1)) *
                          0.25f;
      }
    }
  }
  return out;
}

Tensor3 upsample(const Tensor3& in) {
  Tensor3 out(in.channels(), in.height() * 2, in.width() * 2);
  for (int c = 0; c < out.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
    }
  }
  return out;
}

Tensor3 concat(const Tensor3& a, const Tensor3& b) {
  std::vector<float> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor3(a.channels() + b.channels(), a.height(), a.width(), std::move(data));
}

Tensor3 conv_layer(const Tensor3& in, const DwSepConvLayer& l, std::span<const float> w) {
  const int c = in.channels();
  const std::size_t k2 = static_cast<std::size_t>(l.kernel) * l.kernel;
  auto take = [&](std::size_t n) {
    std::vector<float> v(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(n));
    w = w.subspan(n);
    return v;
  };
  DepthwiseKernel dw{c, l.kernel, take(c * k2), take(c)};
  PointwiseKernel pw{c, l.out_channels, take(static_cast<std::size_t>(l.out_channels) * c), take(l.out_channels)};
  Tensor3 out = kernels::omp::dwsep_conv2d(in, dw, pw, {l.stride, l.dilation});
  if (l.relu) {
    for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  }
  return out;
}

// Clamped so the map stays strictly inside (0, 1) after rounding to float.
float sigmoid(float v) {
  const float s = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  return std::clamp(s, std::numeric_limits<float>::denorm_min(), std::nextafter(1.0f, 0.0f));
}

}  // namespace

ForwardResult forward_full(const NetSpec& net, const Tensor3& input) {
  net.validate();
  if (input.channels() != net.input.channels || input.height() != net.input.height ||
      input.width() != net.input.width) {
    throw InvalidArgument("network input shape mismatch");
  }
  std::vector<Tensor3> outputs;
  outputs.reserve(net.layers.size());
  std::span<const float> weights = net.weights;
  const Tensor3* cur = &input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Tensor3 next = std::visit(Overloaded{
                                  [&](const DwSepConvLayer& l) {
                                    const std::size_t n = conv_weight_count(cur->channels(), l);
                                    Tensor3 t = conv_layer(*cur, l, weights.first(n));
                                    weights = weights.subspan(n);
                                    return t;
                                  },
                                  [&](const Downsample2x&) { return downsample(*cur); },
                                  [&](const Upsample2x&) { return upsample(*cur); },
                                  [&](const SkipConcat& s) {
                                    return concat(*cur, s.source == -1 ? input : outputs[s.source]);
                                  },
                                  [&](const SigmoidHead&) {
                                    Tensor3 t = *cur;
                                    for (float& v : t.data()) v = sigmoid(v);
                                    return t;
                                  },
                              },
                              net.layers[i]);
    outputs.push_back(std::move(next));
    cur = &outputs.back();
  }
  const Tensor3& last = outputs.back();
  ForwardResult result{PlaneF32(last.width(), last.height(), std::vector<float>(last.data().begin(), last.data().end())),
                       std::nullopt};
  if (net.bottleneck >= 0) {
    const auto d = outputs[net.bottleneck].data();
    result.bottleneck = std::vector<float>(d.begin(), d.end());
  }
  return result;
}

ProbMap forward(const NetSpec& net, const Tensor3& input) { return forward_full(net, input).probabilities; }

std::vector<float> bottleneck_vector(const NetSpec& net, const Tensor3& input) {
  if (net.bottleneck < 0) throw InvalidArgument("network has no bottleneck layer flagged");
  return *forward_full(net, input).bottleneck;
}

NetSpec make_unet(Shape input, int base_channels, int levels, bool dilated_bottleneck) {
  if (base_channels < 1 || levels < 0) throw InvalidArgument("make_unet: bad width/depth");
  NetSpec net;
  net.input = input;
  std::vector<int> skips;
  auto add = [&](Layer l) {
    net.layers.push_back(l);
    return static_cast<int>(net.layers.size()) - 1;
  };
  skips.push_back(add(DwSepConvLayer{base_channels}));
  for (int l = 1; l < levels; ++l) {
    add(Downsample2x{});
    skips.push_back(add(DwSepConvLayer{base_channels << l}));
  }
  if (levels > 0) add(Downsample2x{});
  net.bottleneck = add(DwSepConvLayer{base_channels << levels, 3, 1, dilated_bottleneck ? 2 : 1});
  for (int l = levels - 1; l >= 0; --l) {
    add(Upsample2x{});
    add(SkipConcat{skips[l]});
    add(DwSepConvLayer{base_channels << l});
  }
  add(DwSepConvLayer{1, 1, 1, 1, false});
  add(SigmoidHead{});
  net.weights.assign(net.expected_weight_count(), 0.0f);
  net.validate();
  return net;
}

void randomize_weights(NetSpec& net, std::uint64_t seed, float scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-scale, scale);
  net.weights.resize(net.expected_weight_count());
  for (float& w : net.weights) w = dist(rng);
}

Tensor3 image_to_tensor(const ImageRGB8& img) {
  Tensor3 t(3, img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const Rgb p = img.at(x, y);
      t.at(0, y, x) = p.r / 255.0f;
      t.at(1, y, x) = p.g / 255.0f;
      t.at(2, y, x) = p.b / 255.0f;
    }
  }
  return t;
}

// ---- PNET serialization ----------------------------------------------------

namespace {

constexpr std::uint16_t kNetFormatVersion = 1;

enum class LayerTag : std::uint8_t { Conv = 0, Down = 1, Up = 2, Skip = 3, Sigmoid = 4 };

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw DataError("PNET: truncated file");
  }
  std::uint64_t get(int n) {
    need(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_net(const NetSpec& net) {
  net.validate();
  Writer w;
  w.bytes("PNET");
  w.u16(kNetFormatVersion);
  w.u32(net.input.channels);
  w.u32(net.input.height);
  w.u32(net.input.width);
  w.i32(net.bottleneck);
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& layer : net.layers) {
    std::visit(Overloaded{
                   [&](const DwSepConvLayer& l) {
                     w.u8(static_cast<std::uint8_t>(LayerTag::Conv));
                     w.u32(l.out_channels);
                     w.u32(l.kernel);
                     w.u32(l.stride);
                     w.u32(l.dilation);
                     w.u8(l.relu ? 1 : 0);
                   },
                   [&](const Downsample2x&) { w.u8(static_cast<std::uint8_t>(LayerTag::Down)); },
                   [&](const Upsample2x&) { w.u8(static_cast<std::uint8_t>(LayerTag::Up)); },
                   [&](const SkipConcat& s) {
                     w.u8(static_cast<std::uint8_t>(LayerTag::Skip));
                     w.i32(s.source);
                   },
                   [&](const SigmoidHead&) { w.u8(static_cast<std::uint8_t>(LayerTag::Sigmoid)); },
               },
               layer);
  }
  w.u32(static_cast<std::uint32_t>(net.weights.size()));
  for (float v : net.weights) w.f32(v);
  return w.take();
}

NetSpec deserialize_net(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), "PNET", 4) != 0) throw DataError("PNET: bad magic");
  const auto version = r.u16();
  if (version != kNetFormatVersion) throw DataError("PNET: unsupported version " + std::to_string(version));
  NetSpec net;
  net.input.channels = static_cast<int>(r.u32());
  net.input.height = static_cast<int>(r.u32());
  net.input.width = static_cast<int>(r.u32());
  net.bottleneck = r.i32();
  const auto count = r.u32();
  if (count > 4096) throw DataError("PNET: implausible layer count");
  for (std::uint32_t i = 0; i < count; ++i) {
    switch (static_cast<LayerTag>(r.u8())) {
      case LayerTag::Conv: {
        DwSepConvLayer l;
        l.out_channels = static_cast<int>(r.u32());
        l.kernel = static_cast<int>(r.u32());
        l.stride = static_cast<int>(r.u32());
        l.dilation = static_cast<int>(r.u32());
        l.relu = r.u8() != 0;
        net.layers.emplace_back(l);
        break;
      }
      case LayerTag::Down: net.layers.emplace_back(Downsample2x{}); break;
      case LayerTag::Up: net.layers.emplace_back(Upsample2x{}); break;
      case LayerTag::Skip: net.layers.emplace_back(SkipConcat{r.i32()}); break;
      case LayerTag::Sigmoid: net.layers.emplace_back(SigmoidHead{}); break;
      default: throw DataError("PNET: unknown layer type at layer " + std::to_string(i));
    }
  }
  const auto n = r.u32();
  if (static_cast<std::size_t>(n) * 4 > bytes.size()) throw DataError("PNET: truncated weight blob");
  net.weights.resize(n);
  for (auto& v : net.weights) v = r.f32();
  if (!r.done()) throw DataError("PNET: trailing bytes after weight blob");
  for (float v : net.weights) {
    if (!std::isfinite(v)) throw DataError("PNET: non-finite weight");
  }
  net.validate();
  return net;
}

void save_net(const NetSpec& net, const std::filesystem::path& path) {
  const auto bytes = serialize_net(net);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

NetSpec load_net(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_net(bytes);
}

}  // namespace hbscreen::nn
