#include "hbscreen/image_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

// jpeglib.h needs FILE/size_t declared first.
#include <jpeglib.h>

#include "hbscreen/error.hpp"

namespace hbscreen::io {
namespace {

bool is_png(std::span<const std::uint8_t> b) {
  return b.size() >= 8 && png_sig_cmp(b.data(), 0, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> b) { return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF; }

ImageRGB8 decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError(std::string("PNG decode failed: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  if (image.width < 1 || image.height < 1 || image.width > 16384 || image.height > 16384) {
    png_image_free(&image);
    throw DataError("PNG has unsupported dimensions");
  }
  std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, data.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("PNG decode failed: " + msg);
  }
  return ImageRGB8(static_cast<int>(image.width), static_cast<int>(image.height), std::move(data));
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

ImageRGB8 decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> data;
  int width = 0, height = 0;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError(std::string("JPEG decode failed: ") + jerr.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  data.resize(static_cast<std::size_t>(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = data.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return ImageRGB8(width, height, std::move(data));
}

}  // namespace

ImageRGB8 decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (is_jpeg(bytes)) return decode_jpeg(bytes);
  throw DataError("unrecognized image format (expected PNG or JPEG)");
}

ImageRGB8 read_image(const std::filesystem::path& path) { return decode_image(read_file(path)); }

std::vector<std::uint8_t> encode_png(const ImageRGB8& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.data().data(), 0, nullptr)) {
    throw DataError(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.data().data(), 0, nullptr)) {
    throw DataError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

void write_png(const ImageRGB8& img, const std::filesystem::path& path) { write_file(path, encode_png(img)); }

ImageRGB8 mask_to_image(const RegionMask& mask) {
  ImageRGB8 out(mask.width(), mask.height());
  auto d = out.data();
  const auto b = mask.bits();
  for (std::size_t i = 0; i < b.size(); ++i) d[3 * i] = d[3 * i + 1] = d[3 * i + 2] = b[i] ? 255 : 0;
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("short write to " + path.string());
}

}  // namespace hbscreen::io
