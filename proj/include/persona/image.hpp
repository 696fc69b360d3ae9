#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace persona {

// Normalized [x1, y1, x2, y2] box relative to image width/height.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 1.0;
  double y2 = 1.0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

// 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1.
bool is_valid_bbox(const BBox& box);

// Interleaved 8-bit pixels, row-major. Channel order is whatever the codec
// produced; every operation here is channel-agnostic.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c),
      pixels(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// PNG/JPEG/PPM and anything else the codec understands. DecodeError on failure.
Image decode_image(std::string_view bytes);
std::string encode_png(const Image& image);

// Crop of round(w*(x2-x1)) x round(h*(y2-y1)) pixels, clamped to >= 1x1,
// anchored at round(w*x1), round(h*y1).
Image crop(const Image& image, const BBox& box);
std::string crop(std::string_view bytes, const BBox& box);

Image flip_horizontal(const Image& image);
Image flip_vertical(const Image& image);
// Clockwise quarter turns.
Image rotate90(const Image& image);
Image rotate180(const Image& image);
Image rotate270(const Image& image);

}  // namespace persona
