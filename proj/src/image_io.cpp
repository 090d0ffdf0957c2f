#include "rfr/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "rfr/weights_io.hpp"

namespace rfr {
namespace {

class HeaderParser {
 public:
  HeaderParser(const std::vector<std::uint8_t>& bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) fail(std::string(field) + " is too large");
    }
    if (digits == 0) fail(std::string("missing ") + field);
    return value;
  }

  /// Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing raster separator");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(origin_ + ": malformed PNM header (" + what + ")");
  }

  std::size_t pos_ = 0;

 private:
  const std::vector<std::uint8_t>& bytes_;
  const std::string& origin_;
};

}  // namespace

Tensor<float> decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  HeaderParser p(bytes, origin);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    p.fail("expected P5 or P6 magic");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  p.pos_ = 2;
  const std::size_t width = p.number("width");
  const std::size_t height = p.number("height");
  const std::size_t maxval = p.number("maxval");
  if (width == 0 || height == 0) p.fail("zero dimension");
  if (maxval != 255) p.fail("only maxval 255 is supported, got " + std::to_string(maxval));
  const std::size_t start = p.raster_start();
  const std::size_t expected = width * height * channels;
  if (bytes.size() - start < expected) {
    throw FormatError(origin + ": truncated raster (" + std::to_string(bytes.size() - start) +
                      " of " + std::to_string(expected) + " bytes)");
  }
  Tensor<float> image(Shape{1, channels, height, width});
  auto dst = image.data();
  const std::size_t plane = width * height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      dst[c * plane + i] = static_cast<float>(bytes[start + i * channels + c]) / 255.0f;
    }
  }
  return image;
}

std::vector<std::uint8_t> encode_pnm(const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw DimensionError("encode_pnm: expected shape (1, 1|3, h, w), got " + s.str());
  }
  const std::string header = std::string(s.c == 1 ? "P5" : "P6") + "\n" + std::to_string(s.w) +
                             " " + std::to_string(s.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + s.numel());
  const std::size_t plane = s.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const float v = image[c * plane + i];
      const float clamped = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
      out.push_back(static_cast<std::uint8_t>(std::lround(clamped * 255.0f)));
    }
  }
  return out;
}

Tensor<float> read_pnm(const std::string& path) { return decode_pnm(read_file(path), path); }

void write_pnm(const std::string& path, const Tensor<float>& image) {
  write_file(path, encode_pnm(image));
}

Tensor<float> threshold_mask(const Tensor<float>& gray) {
  const Shape s = gray.shape();
  if (s.c != 1) {
    throw DimensionError("threshold_mask: expected a single-channel image, got " + s.str());
  }
  Tensor<float> mask(s);
  auto dst = mask.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = std::lround(gray[i] * 255.0f) >= 128 ? 1.0f : 0.0f;
  }
  return mask;
}

}  // namespace rfr
