#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace citl {

/// 8-bit RGBA raster, row-major.
struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 4

  RgbaImage() = default;
  RgbaImage(int w, int h, std::uint32_t fill_rgba = 0xFFFFFFFFu);

  std::uint32_t at(int x, int y) const;  // packed 0xRRGGBBAA
  void set(int x, int y, std::uint32_t rgba);
  void fill_rect(int x, int y, int w, int h, std::uint32_t rgba);

  /// Copy of the top-left w x h region.
  RgbaImage cropped(int w, int h) const;
};

/// Throws UndecodableImage on anything libpng rejects.
RgbaImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const RgbaImage& image);

/// Fraction of pixels equal to the most common pixel value.
double modal_color_fraction(const RgbaImage& image);

inline constexpr double k_blank_threshold = 0.995;

/// True when at least 99.5% of pixels share the modal colour.
bool is_blank(const RgbaImage& image);
bool is_blank(std::span<const std::uint8_t> png_bytes);

}  // namespace citl
