#pragma once

// Binary PGM (P5) and PPM (P6) export with maxval 255. Pixel bytes are
// round(value * 255), half up, after clamping to [0,1].

#include <cctype>
#include <string>
#include <vector>

#include "grnn/binary_io.hpp"
#include "grnn/dataset.hpp"
#include "grnn/metrics.hpp"

namespace grnn {

enum class ImageFormat { Pgm, Ppm };

inline ImageFormat format_for_channels(std::size_t channels) {
  if (channels == 1) return ImageFormat::Pgm;
  if (channels == 3) return ImageFormat::Ppm;
  throw std::invalid_argument("no PGM/PPM encoding for " + std::to_string(channels) + " channels");
}

inline const char* image_extension(ImageFormat f) { return f == ImageFormat::Pgm ? ".pgm" : ".ppm"; }

// `values` is one (C, H, W) planar image; PPM output is interleaved RGB.
inline std::vector<unsigned char> encode_pnm(const std::vector<double>& values, const ImageShape& s,
                                             ImageFormat f) {
  const std::size_t want = f == ImageFormat::Pgm ? 1 : 3;
  if (s.channels != want) {
    throw std::invalid_argument(std::string(f == ImageFormat::Pgm ? "PGM" : "PPM") + " needs " +
                                std::to_string(want) + " channel(s), image has " + std::to_string(s.channels));
  }
  if (values.size() != s.size()) throw ShapeError("encode_pnm: value count does not match shape");
  const std::string header = std::string(f == ImageFormat::Pgm ? "P5" : "P6") + "\n" + std::to_string(s.width) +
                             " " + std::to_string(s.height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  const std::size_t plane = s.height * s.width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < s.channels; ++c) out.push_back(quantize(values[c * plane + p]));
  }
  return out;
}

struct DecodedImage {
  ImageShape shape;
  std::vector<double> values;  // planar (C, H, W), byte / 255
};

namespace detail {

// Whitespace-separated header token; '#' starts a comment running to end of line.
inline std::size_t pnm_number(const std::vector<unsigned char>& b, std::size_t& pos, const char* what) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  std::size_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + (b[pos++] - '0');
  if (pos == start) throw FormatError(std::string("expected ") + what + " in PNM header", start);
  return v;
}

}  // namespace detail

inline DecodedImage decode_pnm(const std::vector<unsigned char>& b) {
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) throw FormatError("not a P5/P6 image", 0);
  DecodedImage img;
  img.shape.channels = b[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  img.shape.width = detail::pnm_number(b, pos, "width");
  img.shape.height = detail::pnm_number(b, pos, "height");
  const std::size_t maxval = detail::pnm_number(b, pos, "maxval");
  if (maxval != 255) throw FormatError("only maxval 255 is supported", pos);
  if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError("missing whitespace after maxval", pos);
  ++pos;
  const std::size_t plane = img.shape.height * img.shape.width;
  if (b.size() - pos < plane * img.shape.channels) throw FormatError("truncated PNM pixel data", b.size());
  img.values.resize(plane * img.shape.channels);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < img.shape.channels; ++c) {
      img.values[c * plane + p] = b[pos + p * img.shape.channels + c] / 255.0;
    }
  }
  return img;
}

inline void write_image(const std::vector<double>& values, const ImageShape& s, const std::string& path,
                        ImageFormat f) {
  write_file_bytes(path, encode_pnm(values, s, f));
}

inline void write_image(const std::vector<double>& values, const ImageShape& s, const std::string& path) {
  write_image(values, s, path, format_for_channels(s.channels));
}

inline DecodedImage read_image(const std::string& path) { return decode_pnm(read_file_bytes(path)); }

}  // namespace grnn
