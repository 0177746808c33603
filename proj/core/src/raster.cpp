#include "icar/raster.hpp"

#include <cmath>
#include <cstring>

#include <fmt/format.h>
#include <png.h>

#include "icar/error.hpp"

namespace icar {

Raster Raster::filled(std::size_t w, std::size_t h, Rgb colour) {
  Raster r{w, h, 3, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t i = 0; i < w * h; ++i) {
    r.pixels[3 * i] = colour.r;
    r.pixels[3 * i + 1] = colour.g;
    r.pixels[3 * i + 2] = colour.b;
  }
  return r;
}

Raster Raster::transparent(std::size_t w, std::size_t h) {
  return Raster{w, h, 4, std::vector<std::uint8_t>(w * h * 4, 0)};
}

Rgb Raster::rgb(std::size_t x, std::size_t y) const {
  const auto* p = at(x, y);
  return {p[0], p[1], p[2]};
}

Raster resize_nearest(const Raster& src, std::size_t new_w, std::size_t new_h) {
  if (src.empty() || new_w == 0 || new_h == 0) throw ContractError("resize_nearest: empty raster");
  Raster out{new_w, new_h, src.channels, std::vector<std::uint8_t>(new_w * new_h * src.channels)};
  for (std::size_t y = 0; y < new_h; ++y) {
    const std::size_t sy = std::min(src.height - 1, y * src.height / new_h);
    for (std::size_t x = 0; x < new_w; ++x) {
      const std::size_t sx = std::min(src.width - 1, x * src.width / new_w);
      std::memcpy(out.at(x, y), src.at(sx, sy), src.channels);
    }
  }
  return out;
}

void blit(Raster& dst, const Raster& src, std::size_t x0, std::size_t y0) {
  if (dst.channels != 3) throw ContractError("blit: destination must be RGB");
  if (x0 + src.width > dst.width || y0 + src.height > dst.height) {
    throw ContractError(fmt::format("blit: {}x{} at ({}, {}) exceeds {}x{} canvas", src.width, src.height, x0, y0,
                                    dst.width, dst.height));
  }
  for (std::size_t y = 0; y < src.height; ++y) {
    for (std::size_t x = 0; x < src.width; ++x) {
      const std::uint8_t* s = src.at(x, y);
      std::uint8_t* d = dst.at(x0 + x, y0 + y);
      if (src.channels == 3) {
        std::memcpy(d, s, 3);
        continue;
      }
      const unsigned a = s[3];
      if (a == 0) continue;
      for (int c = 0; c < 3; ++c) d[c] = static_cast<std::uint8_t>((s[c] * a + d[c] * (255 - a) + 127) / 255);
    }
  }
}

Rgb hsv_to_rgb(double hue_deg, double s, double v) {
  const double h = std::fmod(std::fmod(hue_deg, 360.0) + 360.0, 360.0) / 60.0;
  const double c = v * s;
  const double x = c * (1 - std::abs(std::fmod(h, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  auto q = [m](double u) { return static_cast<std::uint8_t>(std::lround((u + m) * 255.0)); };
  return {q(r), q(g), q(b)};
}

namespace {

png_image make_image(const Raster& raster) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(raster.width);
  img.height = static_cast<png_uint_32>(raster.height);
  img.format = raster.channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  return img;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Raster& raster) {
  if (raster.empty()) throw ContractError("encode_png: empty raster");
  png_image img = make_image(raster);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, raster.pixels.data(), 0, nullptr)) {
    throw Error(fmt::format("png encode failed: {}", img.message));
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raster.pixels.data(), 0, nullptr)) {
    throw Error(fmt::format("png encode failed: {}", img.message));
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
  if (raster.empty()) throw ContractError("write_png: empty raster");
  png_image img = make_image(raster);
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, raster.pixels.data(), 0, nullptr)) {
    throw Error(fmt::format("png write to '{}' failed: {}", path.string(), img.message));
  }
}

}  // namespace icar
