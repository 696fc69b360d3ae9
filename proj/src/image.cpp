#include "persona/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

#include "persona/error.hpp"

namespace persona {

bool is_valid_bbox(const BBox& b) {
  const auto finite = std::isfinite(b.x1) && std::isfinite(b.y1) &&
                      std::isfinite(b.x2) && std::isfinite(b.y2);
  return finite && b.x1 >= 0.0 && b.x1 < b.x2 && b.x2 <= 1.0 && b.y1 >= 0.0 &&
         b.y1 < b.y2 && b.y2 <= 1.0;
}

Image decode_image(std::string_view bytes) {
  if (bytes.empty()) {
    throw Error(ErrorCode::kDecodeError, "empty image");
  }
  const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1,
                    const_cast<char*>(bytes.data()));
  cv::Mat mat;
  try {
    mat = cv::imdecode(raw, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::kDecodeError, std::string("image decode failed: ") + e.what());
  }
  if (mat.empty()) {
    throw Error(ErrorCode::kDecodeError, "image decode failed");
  }
  if (mat.depth() != CV_8U) {
    mat.convertTo(mat, CV_8U, mat.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
  }
  Image image(mat.cols, mat.rows, mat.channels());
  for (int y = 0; y < mat.rows; ++y) {
    const auto* row = mat.ptr<std::uint8_t>(y);
    std::copy(row, row + static_cast<std::size_t>(mat.cols) * mat.channels(),
              image.pixels.begin() +
                  static_cast<std::ptrdiff_t>(y) * mat.cols * mat.channels());
  }
  return image;
}

std::string encode_png(const Image& image) {
  if (image.width <= 0 || image.height <= 0 || image.channels <= 0) {
    throw Error(ErrorCode::kDecodeError, "cannot encode an empty image");
  }
  const cv::Mat mat(image.height, image.width, CV_8UC(image.channels),
                    const_cast<std::uint8_t*>(image.pixels.data()));
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", mat, out)) {
    throw Error(ErrorCode::kDecodeError, "png encode failed");
  }
  return {out.begin(), out.end()};
}

Image crop(const Image& image, const BBox& box) {
  if (!is_valid_bbox(box)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid bbox");
  }
  const int w = image.width;
  const int h = image.height;
  const int cw = std::clamp(static_cast<int>(std::lround(w * (box.x2 - box.x1))), 1, w);
  const int ch = std::clamp(static_cast<int>(std::lround(h * (box.y2 - box.y1))), 1, h);
  const int x0 = std::clamp(static_cast<int>(std::lround(w * box.x1)), 0, w - cw);
  const int y0 = std::clamp(static_cast<int>(std::lround(h * box.y1)), 0, h - ch);
  Image out(cw, ch, image.channels);
  const std::size_t row_bytes = static_cast<std::size_t>(cw) * image.channels;
  for (int y = 0; y < ch; ++y) {
    const auto src = image.pixels.begin() +
                     (static_cast<std::ptrdiff_t>(y0 + y) * w + x0) * image.channels;
    std::copy(src, src + static_cast<std::ptrdiff_t>(row_bytes),
              out.pixels.begin() + static_cast<std::ptrdiff_t>(y * row_bytes));
  }
  return out;
}

std::string crop(std::string_view bytes, const BBox& box) {
  return encode_png(crop(decode_image(bytes), box));
}

namespace {

// out(x', y') = in(map(x', y')) for an output of size ow x oh.
template <typename Map>
Image remap(const Image& in, int ow, int oh, Map map) {
  Image out(ow, oh, in.channels);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const auto [sx, sy] = map(x, y);
      for (int c = 0; c < in.channels; ++c) out.at(x, y, c) = in.at(sx, sy, c);
    }
  }
  return out;
}

}  // namespace

Image flip_horizontal(const Image& in) {
  return remap(in, in.width, in.height,
               [&](int x, int y) { return std::pair{in.width - 1 - x, y}; });
}

Image flip_vertical(const Image& in) {
  return remap(in, in.width, in.height,
               [&](int x, int y) { return std::pair{x, in.height - 1 - y}; });
}

Image rotate90(const Image& in) {
  return remap(in, in.height, in.width,
               [&](int x, int y) { return std::pair{y, in.height - 1 - x}; });
}

Image rotate180(const Image& in) {
  return remap(in, in.width, in.height, [&](int x, int y) {
    return std::pair{in.width - 1 - x, in.height - 1 - y};
  });
}

Image rotate270(const Image& in) {
  return remap(in, in.height, in.width,
               [&](int x, int y) { return std::pair{in.width - 1 - y, x}; });
}

}  // namespace persona
