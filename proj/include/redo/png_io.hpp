#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace redo {

/// 8-bit raster, interleaved row-major (y, x, channel). One channel for gray, three for RGB.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  Raster() = default;
  Raster(int w, int h, int c) : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0) {}
  std::uint8_t& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

/// Reads any PNG as 8-bit gray or RGB: palettes expand, 16-bit strips, alpha is dropped.
Raster read_png(const std::string& path);
void write_png(const std::string& path, const Raster& raster);

}  // namespace redo
