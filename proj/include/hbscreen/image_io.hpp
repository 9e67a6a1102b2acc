#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hbscreen/image.hpp"

namespace hbscreen::io {

// Decodes PNG or JPEG (sniffed from the signature). Grey and alpha channels are
// folded to RGB. Throws DataError for anything undecodable.
ImageRGB8 decode_image(std::span<const std::uint8_t> bytes);
ImageRGB8 read_image(const std::filesystem::path& path);

// 8-bit RGB PNG, default zlib settings (deterministic for a given libpng).
std::vector<std::uint8_t> encode_png(const ImageRGB8& img);
void write_png(const ImageRGB8& img, const std::filesystem::path& path);

// Mask as 0/255 greyscale-looking RGB PNG.
ImageRGB8 mask_to_image(const RegionMask& mask);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace hbscreen::io
