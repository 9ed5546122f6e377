#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ttoreg {

/// 8-bit RGB raster, row-major from the top-left corner.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0) : width(w), height(h), pixels(3u * w * h, fill) {}

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    std::uint8_t* p = &pixels[3u * (static_cast<std::size_t>(y) * width + x)];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  /// Copies `src` with its top-left corner at (x0, y0), clipped.
  void blit(const RgbImage& src, int x0, int y0);
};

void write_png(const RgbImage& image, const std::filesystem::path& path);

}  // namespace ttoreg
