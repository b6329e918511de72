#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace monoscene {

struct GrayImage8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

struct GrayImage16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;  // row-major, host byte order
};

GrayImage8 read_png_gray8(const std::filesystem::path& path);
GrayImage16 read_png_gray16(const std::filesystem::path& path);
void write_png_gray8(const std::filesystem::path& path, const GrayImage8& img);
void write_png_gray16(const std::filesystem::path& path, const GrayImage16& img);

}  // namespace monoscene
