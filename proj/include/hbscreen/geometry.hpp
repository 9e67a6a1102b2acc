#pragma once

#include <array>
#include <variant>

#include "hbscreen/image.hpp"

namespace hbscreen {

struct FlipH {};
struct FlipV {};
struct Rot90 {};  // clockwise

// Maps source coordinates to destination: [x' y']^T = M * [x y 1]^T.
struct Affine {
  std::array<double, 6> m = {1, 0, 0, 0, 1, 0};
};

using GeometricOp = std::variant<FlipH, FlipV, Rot90, Affine>;

// Flips and rot90 are exact pixel permutations. Affine is inverse-mapped with
// bilinear sampling and edge clamp; the output keeps the input dimensions.
// Throws InvalidArgument for a singular affine matrix.
ImageRGB8 transform_geometric(const ImageRGB8& img, const GeometricOp& op);

}  // namespace hbscreen
