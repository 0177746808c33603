#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace icar {

struct Rgb {
  std::uint8_t r = 255, g = 255, b = 255;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit raster, row-major, `channels` of 3 (RGB) or 4 (RGBA, straight alpha).
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  static Raster filled(std::size_t w, std::size_t h, Rgb colour);
  static Raster transparent(std::size_t w, std::size_t h);

  bool empty() const noexcept { return width == 0 || height == 0; }
  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[(y * width + x) * channels]; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return &pixels[(y * width + x) * channels]; }
  Rgb rgb(std::size_t x, std::size_t y) const;
};

/// Nearest-neighbour resample to exactly new_w x new_h.
Raster resize_nearest(const Raster& src, std::size_t new_w, std::size_t new_h);

/// Alpha-composites `src` onto the RGB `dst` with its top-left at (x, y).
void blit(Raster& dst, const Raster& src, std::size_t x, std::size_t y);

Rgb hsv_to_rgb(double hue_deg, double saturation, double value);

void write_png(const std::filesystem::path& path, const Raster& raster);
std::vector<std::uint8_t> encode_png(const Raster& raster);

}  // namespace icar
