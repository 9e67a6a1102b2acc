#include <gtest/gtest.h>

#include <cmath>

#include "hbscreen/color.hpp"
#include "hbscreen/error.hpp"
#include "hbscreen/geometry.hpp"
#include "test_support.hpp"

using namespace hbscreen;

namespace {

// Textbook sRGB -> XYZ (D65) -> Lab, written out longhand.
std::array<double, 3> reference_lab(int R, int G, int B) {
  auto lin = [](double c) {
    c /= 255.0;
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
  };
  const double r = lin(R), g = lin(G), b = lin(B);
  const double X = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double Z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  auto f = [](double t) { return t > 0.008856451679 ? std::cbrt(t) : t / 0.128418549 + 4.0 / 29.0; };
  const double fx = f(X / 0.95047), fy = f(Y / 1.0), fz = f(Z / 1.08883);
  return {116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)};
}

ImageRGB8 solid(int r, int g, int b) {
  ImageRGB8 img(2, 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) img.set(x, y, {std::uint8_t(r), std::uint8_t(g), std::uint8_t(b)});
  return img;
}

}  // namespace

TEST(Color, WhiteIsOnTheAchromaticAxis) {
  const auto lab = convert_color(solid(255, 255, 255), ColorSpaceId::CIELab);
  EXPECT_NEAR(lab[0].at(0, 0), 100.0, 0.01);
  EXPECT_NEAR(lab[1].at(0, 0), 0.0, 0.01);
  EXPECT_NEAR(lab[2].at(0, 0), 0.0, 0.01);
}

TEST(Color, GrayHasZeroSaturation) {
  const auto hsv = convert_color(solid(128, 128, 128), ColorSpaceId::HSV);
  EXPECT_FLOAT_EQ(hsv[1].at(1, 1), 0.0f);
  EXPECT_NEAR(hsv[2].at(1, 1), 128.0 / 255.0, 1e-6);
}

TEST(Color, PureRedMatchesLonghandLab) {
  const auto lab = convert_color(solid(255, 0, 0), ColorSpaceId::CIELab);
  EXPECT_NEAR(lab[0].at(0, 0), 53.24, 0.1);
  EXPECT_NEAR(lab[1].at(0, 0), 80.09, 0.1);
  EXPECT_NEAR(lab[2].at(0, 0), 67.20, 0.1);
}

TEST(Color, LabAgreesWithLonghandOnRandomColours) {
  const ImageRGB8 img = fixtures::random_image(32, 32, 11);
  const auto lab = convert_color(img, ColorSpaceId::CIELab);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const Rgb c = img.at(x, y);
      const auto ref = reference_lab(c.r, c.g, c.b);
      // the white point differs from the rounded D65 constants in the 4th digit
      EXPECT_NEAR(lab[0].at(x, y), ref[0], 0.02);
      EXPECT_NEAR(lab[1].at(x, y), ref[1], 0.05);
      EXPECT_NEAR(lab[2].at(x, y), ref[2], 0.05);
    }
  }
}

TEST(Color, YCbCrAndHsvOfPrimaries) {
  const auto ycc = convert_color(solid(255, 0, 0), ColorSpaceId::YCbCr);
  EXPECT_NEAR(ycc[0].at(0, 0), 0.299 * 255, 1e-3);
  EXPECT_NEAR(ycc[1].at(0, 0), 128 - 0.168736 * 255, 1e-3);
  EXPECT_NEAR(ycc[2].at(0, 0), 128 + 0.5 * 255, 1e-3);
  const auto hsv = convert_color(solid(0, 0, 255), ColorSpaceId::HSV);
  EXPECT_NEAR(hsv[0].at(0, 0), 240.0, 1e-4);
  EXPECT_NEAR(hsv[1].at(0, 0), 1.0, 1e-6);
}

TEST(Color, RgbIsPassThrough) {
  const ImageRGB8 img = fixtures::random_image(5, 4, 3);
  const auto p = convert_color(img, ColorSpaceId::RGB);
  EXPECT_EQ(p[1].at(2, 3), img.at(2, 3).g);
  EXPECT_EQ(convert_back(p, ColorSpaceId::RGB), img);
}

TEST(Color, InverseOfKnownValues) {
  Planes3 lab{PlaneF32(1, 1, 100.0f), PlaneF32(1, 1, 0.0f), PlaneF32(1, 1, 0.0f)};
  EXPECT_EQ(convert_back(lab, ColorSpaceId::CIELab).at(0, 0), (Rgb{255, 255, 255}));
  Planes3 ycc{PlaneF32(1, 1, 0.0f), PlaneF32(1, 1, 128.0f), PlaneF32(1, 1, 128.0f)};
  EXPECT_EQ(convert_back(ycc, ColorSpaceId::YCbCr).at(0, 0), (Rgb{0, 0, 0}));
}

TEST(Color, RoundTripEverySpace) {
  const ImageRGB8 img = fixtures::random_image(100, 100, 99);
  for (auto space : {ColorSpaceId::CIELab, ColorSpaceId::YCbCr, ColorSpaceId::HSV}) {
    const ImageRGB8 back = convert_back(convert_color(img, space), space);
    int worst = 0;
    for (std::size_t i = 0; i < img.data().size(); ++i) {
      worst = std::max(worst, std::abs(int(img.data()[i]) - int(back.data()[i])));
    }
    EXPECT_LE(worst, 1) << to_string(space);
  }
}

TEST(Color, MismatchedPlanesRejected) {
  Planes3 p{PlaneF32(2, 2), PlaneF32(2, 2), PlaneF32(3, 2)};
  EXPECT_THROW(convert_back(p, ColorSpaceId::HSV), DimensionMismatch);
}

TEST(Geometry, FlipsAndRotationsAreExactGroupActions) {
  const ImageRGB8 img = fixtures::random_image(7, 5, 4);
  EXPECT_EQ(transform_geometric(transform_geometric(img, FlipH{}), FlipH{}), img);
  EXPECT_EQ(transform_geometric(transform_geometric(img, FlipV{}), FlipV{}), img);
  ImageRGB8 r = img;
  for (int i = 0; i < 4; ++i) r = transform_geometric(r, Rot90{});
  EXPECT_EQ(r, img);
  const ImageRGB8 once = transform_geometric(img, Rot90{});
  EXPECT_EQ(once.width(), 5);
  EXPECT_EQ(once.height(), 7);
  EXPECT_EQ(transform_geometric(img, Affine{}), img);
}
