#include "xseg/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

#include "xseg/error.hpp"

namespace xseg::png {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorCode::io, "cannot open '" + path.string() + "'");
  return f;
}

void quiet_warning(png_structp, png_const_charp) {}

// The helpers below only hold trivially destructible locals between setjmp
// and any libpng call that may longjmp back.

bool write_rows(std::FILE* file, png_uint_32 width, png_uint_32 height, int bit_depth,
                int color_type, png_bytepp rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

struct Header {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int bit_depth = 0;
  int color_type = 0;
};

// Reads the header, then (when rows != nullptr) the image. Called twice: once
// to size the buffers, once to fill them.
bool read_png(std::FILE* file, Header* header, png_bytepp rows) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, file);
  png_read_info(png, info);
  header->width = png_get_image_width(png, info);
  header->height = png_get_image_height(png, info);
  header->bit_depth = png_get_bit_depth(png, info);
  header->color_type = png_get_color_type(png, info);
  if (rows != nullptr) {
    if (header->bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (header->bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    png_read_image(png, rows);
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

}  // namespace

GrayImage read_gray(const std::filesystem::path& path) {
  FilePtr file = open(path, "rb");
  Header header;
  if (!read_png(file.get(), &header, nullptr))
    fail(ErrorCode::data, "'" + path.string() + "' is not a readable PNG file");
  if (header.color_type != PNG_COLOR_TYPE_GRAY)
    fail(ErrorCode::data, "'" + path.string() + "' is not a single-plane grayscale PNG");

  GrayImage out;
  out.width = static_cast<int>(header.width);
  out.height = static_cast<int>(header.height);
  out.bit_depth = header.bit_depth == 16 ? 16 : 8;
  const std::size_t n = static_cast<std::size_t>(out.width) * out.height;
  const std::size_t bytes_per_sample = out.bit_depth == 16 ? 2 : 1;
  std::vector<std::uint8_t> buffer(n * bytes_per_sample);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y)
    rows[y] = buffer.data() + static_cast<std::size_t>(y) * out.width * bytes_per_sample;

  std::rewind(file.get());
  if (!read_png(file.get(), &header, rows.data()))
    fail(ErrorCode::data, "failed to decode '" + path.string() + "'");

  out.samples.resize(n);
  if (out.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i)  // little-endian after png_set_swap
      out.samples[i] = static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = buffer[i];
  }
  return out;
}

void write_gray(const std::filesystem::path& path, const GrayImage& image) {
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  if (image.samples.size() != n) fail(ErrorCode::data, "gray image size mismatch");
  if (image.bit_depth != 8 && image.bit_depth != 16)
    fail(ErrorCode::invalid_argument, "bit depth must be 8 or 16");

  const std::size_t bytes_per_sample = image.bit_depth == 16 ? 2 : 1;
  std::vector<std::uint8_t> buffer(n * bytes_per_sample);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint16_t v = image.samples[i];
    if (image.bit_depth == 8) {
      if (v > 255) fail(ErrorCode::data, "sample exceeds 8-bit range");
      buffer[i] = static_cast<std::uint8_t>(v);
    } else {
      buffer[2 * i] = static_cast<std::uint8_t>(v & 0xff);
      buffer[2 * i + 1] = static_cast<std::uint8_t>(v >> 8);
    }
  }
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y)
    rows[y] = buffer.data() + static_cast<std::size_t>(y) * image.width * bytes_per_sample;

  FilePtr file = open(path, "wb");
  if (!write_rows(file.get(), static_cast<png_uint_32>(image.width),
                  static_cast<png_uint_32>(image.height), image.bit_depth, PNG_COLOR_TYPE_GRAY,
                  rows.data()))
    fail(ErrorCode::io, "failed to write '" + path.string() + "'");
}

void write_rgb(const std::filesystem::path& path, const RgbImage& image) {
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height * 3;
  if (image.samples.size() != n) fail(ErrorCode::data, "rgb image size mismatch");
  std::vector<std::uint8_t> copy = image.samples;
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y)
    rows[y] = copy.data() + static_cast<std::size_t>(y) * image.width * 3;

  FilePtr file = open(path, "wb");
  if (!write_rows(file.get(), static_cast<png_uint_32>(image.width),
                  static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB, rows.data()))
    fail(ErrorCode::io, "failed to write '" + path.string() + "'");
}

}  // namespace xseg::png
