#include "citl/image.hpp"

#include <algorithm>
#include <cstring>
#include <unordered_map>

#include <fmt/format.h>
#include <png.h>

#include "citl/error.hpp"

namespace citl {

RgbaImage::RgbaImage(int w, int h, std::uint32_t fill_rgba)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 4) {
  fill_rect(0, 0, w, h, fill_rgba);
}

std::uint32_t RgbaImage::at(int x, int y) const {
  const auto* p = &pixels[(static_cast<std::size_t>(y) * width + x) * 4];
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void RgbaImage::set(int x, int y, std::uint32_t rgba) {
  auto* p = &pixels[(static_cast<std::size_t>(y) * width + x) * 4];
  p[0] = static_cast<std::uint8_t>(rgba >> 24);
  p[1] = static_cast<std::uint8_t>(rgba >> 16);
  p[2] = static_cast<std::uint8_t>(rgba >> 8);
  p[3] = static_cast<std::uint8_t>(rgba);
}

void RgbaImage::fill_rect(int x, int y, int w, int h, std::uint32_t rgba) {
  const int x1 = std::min(width, x + w);
  const int y1 = std::min(height, y + h);
  for (int yy = std::max(0, y); yy < y1; ++yy) {
    for (int xx = std::max(0, x); xx < x1; ++xx) set(xx, yy, rgba);
  }
}

RgbaImage RgbaImage::cropped(int w, int h) const {
  w = std::min(w, width);
  h = std::min(h, height);
  RgbaImage out;
  out.width = w;
  out.height = h;
  out.pixels.resize(static_cast<std::size_t>(w) * h * 4);
  for (int y = 0; y < h; ++y) {
    std::memcpy(&out.pixels[static_cast<std::size_t>(y) * w * 4],
                &pixels[static_cast<std::size_t>(y) * width * 4], static_cast<std::size_t>(w) * 4);
  }
  return out;
}

RgbaImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw UndecodableImage("not a PNG stream");
  }
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw UndecodableImage(fmt::format("png header: {}", image.message));
  }
  image.format = PNG_FORMAT_RGBA;
  RgbaImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw UndecodableImage(fmt::format("png body: {}", message));
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const RgbaImage& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGBA;
  // worst-case bound, so one compression pass is enough
  png_alloc_size_t size = PNG_IMAGE_PNG_SIZE_MAX(image);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw Error("PngEncodeError", image.message);
  }
  out.resize(size);
  return out;
}

double modal_color_fraction(const RgbaImage& image) {
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  if (n == 0) return 1.0;
  auto pixel = [&](std::size_t i) {
    const auto* p = &image.pixels[i * 4];
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
  };
  // screenshots are mostly long runs of one colour; count runs, not pixels
  std::unordered_map<std::uint32_t, std::size_t> counts;
  for (std::size_t i = 0; i < n;) {
    const auto v = pixel(i);
    std::size_t j = i + 1;
    while (j < n && pixel(j) == v) ++j;
    counts[v] += j - i;
    i = j;
  }
  std::size_t best = 0;
  for (const auto& [v, c] : counts) best = std::max(best, c);
  return static_cast<double>(best) / static_cast<double>(n);
}

bool is_blank(const RgbaImage& image) { return modal_color_fraction(image) >= k_blank_threshold; }

bool is_blank(std::span<const std::uint8_t> png_bytes) { return is_blank(decode_png(png_bytes)); }

}  // namespace citl
