#pragma once

#include "error.hpp"

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <vector>

namespace cinediff {

/// 8-bit image, row-major, 1 (gray) or 3 (RGB) interleaved channels.
struct Image8
{
  int width = 0, height = 0, channels = 1;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c, std::uint8_t fill = 0)
    : width(w)
    , height(h)
    , channels(c)
    , pixels(std::size_t(w) * h * c, fill)
  {
    require(w >= 1 && h >= 1 && (c == 1 || c == 3), "image must be non-empty with 1 or 3 channels");
  }

  std::uint8_t *at(int x, int y) { return pixels.data() + (std::size_t(y) * width + x) * channels; }
};

inline void write_png(std::filesystem::path const &path, Image8 const &img)
{
  if (path.has_parent_path()) { std::filesystem::create_directories(path.parent_path()); }
  FILE *fp = std::fopen(path.string().c_str(), "wb");
  if (fp == nullptr) { throw IoError("cannot open '" + path.string() + "' for writing"); }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG encoding failed for '" + path.string() + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, img.pixels.data() + std::size_t(y) * img.width * img.channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) { throw IoError("closing '" + path.string() + "' failed"); }
}

} // namespace cinediff
