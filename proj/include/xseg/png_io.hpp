#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace xseg::png {

struct GrayImage {
  int width = 0;
  int height = 0;
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> samples;  // interleaved RGB
};

GrayImage read_gray(const std::filesystem::path& path);
void write_gray(const std::filesystem::path& path, const GrayImage& image);
void write_rgb(const std::filesystem::path& path, const RgbImage& image);

}  // namespace xseg::png
