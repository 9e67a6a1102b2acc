#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hbscreen/error.hpp"
#include "hbscreen/nn.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace hbscreen;
using namespace hbscreen::nn;

namespace {

std::pair<DepthwiseKernel, PointwiseKernel> random_kernels(int cin, int cout, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  DepthwiseKernel dw{cin, k, std::vector<float>(static_cast<std::size_t>(cin) * k * k), std::vector<float>(cin)};
  PointwiseKernel pw{cin, cout, std::vector<float>(static_cast<std::size_t>(cin) * cout), std::vector<float>(cout)};
  for (auto* v : {&dw.weights, &dw.bias, &pw.weights, &pw.bias})
    for (auto& x : *v) x = d(rng);
  return {dw, pw};
}

std::pair<DepthwiseKernel, PointwiseKernel> identity_kernels(int c) {
  DepthwiseKernel dw{c, 3, std::vector<float>(static_cast<std::size_t>(c) * 9, 0.0f), std::vector<float>(c, 0.0f)};
  for (int i = 0; i < c; ++i) dw.weights[i * 9 + 4] = 1.0f;
  PointwiseKernel pw{c, c, std::vector<float>(static_cast<std::size_t>(c) * c, 0.0f), std::vector<float>(c, 0.0f)};
  for (int i = 0; i < c; ++i) pw.weights[i * c + i] = 1.0f;
  return {dw, pw};
}

float max_abs_diff(const Tensor3& a, const Tensor3& b) {
  float m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST(DwSepConv, IdentityKernelsReproduceInput) {
  const Tensor3 in = fixtures::random_tensor(3, 7, 9, 1);
  const auto [dw, pw] = identity_kernels(3);
  EXPECT_EQ(dwsep_conv2d(in, dw, pw), in);
}

TEST(DwSepConv, MatchesDirectConvolution) {
  const Tensor3 in = fixtures::random_tensor(3, 8, 8, 2);
  const auto [dw, pw] = random_kernels(3, 4, 3, 3);
  const Tensor3 out = dwsep_conv2d(in, dw, pw);
  const Tensor3 ref = oracle::direct_dwsep(in, dw, pw, 1, 1);
  ASSERT_EQ(out.channels(), ref.channels());
  ASSERT_EQ(out.height(), ref.height());
  EXPECT_LE(max_abs_diff(out, ref), 1e-6f);
}

TEST(DwSepConv, RandomGeometriesMatchOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 1 + static_cast<int>(rng() % 4), co = 1 + static_cast<int>(rng() % 4);
    const int h = 1 + static_cast<int>(rng() % 16), w = 1 + static_cast<int>(rng() % 16);
    const int k = trial % 3 == 0 ? 5 : 3;
    const int stride = trial % 2 == 0 ? 2 : 1, dilation = trial % 4 < 2 ? 2 : 1;
    const Tensor3 in = fixtures::random_tensor(c, h, w, 1000 + trial);
    const auto [dw, pw] = random_kernels(c, co, k, 2000 + trial);
    const Tensor3 out = dwsep_conv2d(in, dw, pw, {stride, dilation});
    const Tensor3 ref = oracle::direct_dwsep(in, dw, pw, stride, dilation);
    ASSERT_EQ(out.height(), ref.height()) << trial;
    ASSERT_EQ(out.width(), ref.width()) << trial;
    EXPECT_LE(max_abs_diff(out, ref), 1e-6f) << trial;
  }
}

TEST(DwSepConv, DilatedSameSizeAndValidation) {
  EXPECT_EQ(conv_output_size(13, 3, 1, 2), 13);
  EXPECT_EQ(conv_output_size(13, 3, 2, 1), 7);
  const Tensor3 in = fixtures::random_tensor(2, 5, 5, 1);
  auto [dw, pw] = identity_kernels(2);
  EXPECT_THROW(dwsep_conv2d(in, dw, pw, {0, 1}), InvalidArgument);
  auto [dw3, pw3] = identity_kernels(3);
  EXPECT_THROW(dwsep_conv2d(in, dw3, pw3), DimensionMismatch);
  dw.size = 2;
  EXPECT_THROW(dwsep_conv2d(in, dw, pw), InvalidArgument);
}

TEST(Net, ZeroWeightsGiveHalfEverywhere) {
  NetSpec net = make_unet({3, 16, 16}, 4, 2, true);
  std::fill(net.weights.begin(), net.weights.end(), 0.0f);
  const ProbMap p = forward(net, fixtures::random_tensor(3, 16, 16, 5));
  for (float v : p.data()) EXPECT_EQ(v, 0.5f);
}

TEST(Net, DeltaKernelReproducesInputBehindSigmoid) {
  NetSpec net;
  net.input = {1, 6, 6};
  net.layers = {DwSepConvLayer{1, 3, 1, 1, false}, SigmoidHead{}};
  net.weights.assign(net.expected_weight_count(), 0.0f);
  net.weights[4] = 1.0f;   // centre tap
  net.weights[10] = 1.0f;  // pointwise 1x1 (after 9 dw + 1 dw bias)
  const Tensor3 in = fixtures::random_tensor(1, 6, 6, 8);
  const ProbMap p = forward(net, in);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      const double logit = std::log(p.at(x, y) / (1.0 - p.at(x, y)));
      EXPECT_NEAR(logit, in.at(0, y, x), 1e-5);
    }
  }
}

TEST(Net, ShapeInvarianceAndDeterminism) {
  for (int size : {8, 16, 32}) {
    for (int levels : {1, 2, 3}) {
      if (size >> levels < 1) continue;
      NetSpec net = make_unet({3, size, size}, 4, levels, levels == 2);
      randomize_weights(net, 42);
      const Tensor3 in = fixtures::random_tensor(3, size, size, 9);
      const ProbMap a = forward(net, in);
      EXPECT_EQ(a.width(), size);
      EXPECT_EQ(a.height(), size);
      for (float v : a.data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
      }
      EXPECT_EQ(forward(net, in), a);
    }
  }
}

TEST(Net, BottleneckFlattening) {
  NetSpec net = make_unet({3, 16, 16}, 4, 2, false);
  randomize_weights(net, 1);
  const auto shapes = net.validate();
  ASSERT_GE(net.bottleneck, 0);
  const Shape b = shapes[net.bottleneck];
  const Tensor3 in = fixtures::random_tensor(3, 16, 16, 2);
  const auto v = bottleneck_vector(net, in);
  EXPECT_EQ(v.size(), static_cast<std::size_t>(b.channels * b.height * b.width));
  EXPECT_EQ(bottleneck_vector(net, in), v);
  const ForwardResult full = forward_full(net, in);
  ASSERT_TRUE(full.bottleneck.has_value());
  EXPECT_EQ(*full.bottleneck, v);
  std::fill(net.weights.begin(), net.weights.end(), 0.0f);
  for (float x : bottleneck_vector(net, in)) EXPECT_EQ(x, 0.0f);
}

TEST(Net, EightByFourByFourBottleneckHas128Values) {
  NetSpec net = make_unet({3, 16, 16}, 2, 2, false);
  const auto shapes = net.validate();
  const Shape b = shapes[net.bottleneck];
  ASSERT_EQ(b, (Shape{8, 4, 4}));
  randomize_weights(net, 3);
  EXPECT_EQ(bottleneck_vector(net, fixtures::random_tensor(3, 16, 16, 4)).size(), 128u);
}

TEST(Net, SerializationRoundTrip) {
  NetSpec net = make_unet({3, 8, 8}, 2, 1, true);
  randomize_weights(net, 7);
  const auto bytes = serialize_net(net);
  const NetSpec back = deserialize_net(bytes);
  EXPECT_EQ(back.input, net.input);
  EXPECT_EQ(back.weights, net.weights);
  EXPECT_EQ(back.bottleneck, net.bottleneck);
  const Tensor3 in = fixtures::random_tensor(3, 8, 8, 1);
  EXPECT_EQ(forward(back, in), forward(net, in));
  auto corrupt = bytes;
  corrupt[0] = 'X';
  EXPECT_THROW(deserialize_net(corrupt), DataError);
  corrupt = bytes;
  corrupt.resize(corrupt.size() - 3);
  EXPECT_THROW(deserialize_net(corrupt), DataError);
}

TEST(Net, BrokenChainRejected) {
  NetSpec net;
  net.input = {3, 8, 8};
  net.layers = {Downsample2x{}, SigmoidHead{}};
  EXPECT_THROW(net.validate(), InvalidArgument);
}
