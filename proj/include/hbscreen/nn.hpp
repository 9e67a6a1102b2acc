#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "hbscreen/image.hpp"

namespace hbscreen::nn {

/// Channel-major activations: data[(c * height + y) * width + x].
class Tensor3 {
 public:
  Tensor3(int channels, int height, int width, float fill = 0.0f);
  Tensor3(int channels, int height, int width, std::vector<float> data);

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  float at(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }
  float& at(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_;
  int height_;
  int width_;
  std::vector<float> data_;
};

struct DepthwiseKernel {
  int channels = 0;
  int size = 3;                // odd
  std::vector<float> weights;  // channels * size * size
  std::vector<float> bias;     // channels
};

struct PointwiseKernel {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<float> weights;  // out_channels * in_channels
  std::vector<float> bias;     // out_channels
};

struct ConvGeometry {
  int stride = 1;
  int dilation = 1;
};

// Zero padding dilation*(k-1)/2, i.e. "same" size at stride 1.
int conv_output_size(int input, int kernel, int stride, int dilation) noexcept;

// Depthwise convolution of every channel followed by a 1x1 channel mix.
// Throws DimensionMismatch when channel counts disagree, InvalidArgument for
// even kernels or non-positive stride/dilation.
Tensor3 dwsep_conv2d(const Tensor3& input, const DepthwiseKernel& depthwise,
                     const PointwiseKernel& pointwise, ConvGeometry geometry = {});

// ---- network description --------------------------------------------------

struct DwSepConvLayer {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  bool relu = true;
};
struct Downsample2x {};  // 2x2 average pooling
struct Upsample2x {};    // nearest neighbour
struct SkipConcat {
  int source = 0;  // index of the layer whose output is appended channel-wise
};
struct SigmoidHead {};  // elementwise logistic on a single-channel tensor

using Layer = std::variant<DwSepConvLayer, Downsample2x, Upsample2x, SkipConcat, SigmoidHead>;

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct NetSpec {
  Shape input;
  std::vector<Layer> layers;
  int bottleneck = -1;        // layer index whose output is the bottleneck
  std::vector<float> weights; // concatenated per conv layer: dw, dw bias, pw, pw bias

  // Output shape of every layer. Throws InvalidArgument naming the first layer
  // that breaks the chain, or when the weight blob length is wrong.
  std::vector<Shape> validate() const;

  std::size_t expected_weight_count() const;
};

using ProbMap = PlaneF32;

ProbMap forward(const NetSpec& net, const Tensor3& input);

// Flattened activations of the bottleneck layer. Throws InvalidArgument when
// no bottleneck layer is flagged.
std::vector<float> bottleneck_vector(const NetSpec& net, const Tensor3& input);

struct ForwardResult {
  ProbMap probabilities;
  std::optional<std::vector<float>> bottleneck;
};
ForwardResult forward_full(const NetSpec& net, const Tensor3& input);

// Small symmetric encoder/decoder with one skip connection per level.
NetSpec make_unet(Shape input, int base_channels, int levels, bool dilated_bottleneck);

// Fills weights with seeded uniform values in [-scale, scale].
void randomize_weights(NetSpec& net, std::uint64_t seed, float scale = 0.5f);

// Normalized RGB tensor (3, h, w) with values in [0, 1].
Tensor3 image_to_tensor(const ImageRGB8& img);

// "PNET" binary format: magic, u16 version, input shape, bottleneck index,
// layer table, little-endian float32 weight blob.
std::vector<std::uint8_t> serialize_net(const NetSpec& net);
NetSpec deserialize_net(std::span<const std::uint8_t> bytes);
void save_net(const NetSpec& net, const std::filesystem::path& path);
NetSpec load_net(const std::filesystem::path& path);

}  // namespace hbscreen::nn
