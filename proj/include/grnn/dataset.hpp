#pragma once

// Datasets: IDX and CIFAR-binary ingestion plus deterministic synthetic data.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "grnn/binary_io.hpp"
#include "grnn/tensor.hpp"

namespace grnn {

struct Dataset {
  std::size_t channels = 1, height = 0, width = 0;
  std::size_t classes = 0;
  std::vector<double> pixels;  // N*C*H*W, row-major, values in [0,1]
  std::vector<std::size_t> labels;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }

  // Images at the given indices as an (n, C, H, W) tensor.
  Tensor images(const std::vector<std::size_t>& index) const {
    const std::size_t s = image_size();
    std::vector<double> v;
    v.reserve(index.size() * s);
    for (std::size_t i : index) {
      if (i >= size()) throw std::out_of_range("Dataset::images: index " + std::to_string(i));
      v.insert(v.end(), pixels.begin() + static_cast<long>(i * s),
               pixels.begin() + static_cast<long>((i + 1) * s));
    }
    return Tensor({index.size(), channels, height, width}, std::move(v));
  }
  std::vector<std::size_t> labels_at(const std::vector<std::size_t>& index) const {
    std::vector<std::size_t> out;
    for (std::size_t i : index) out.push_back(labels.at(i));
    return out;
  }
};

// ---------------------------------------------------------------------------
// IDX

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<std::uint32_t> read_idx_header(ByteReader& r, std::uint32_t magic, const char* kind) {
  const std::uint32_t m = r.u32_be("IDX magic");
  if (m != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad IDX %s magic 0x%08x (expected 0x%08x)", kind, m, magic);
    throw FormatError(buf, 0);
  }
  std::vector<std::uint32_t> dims(magic & 0xff);
  for (auto& d : dims) d = r.u32_be("IDX dimension");
  return dims;
}

}  // namespace detail

// Parses an IDX image file (u8, 3-d) and label file (u8, 1-d). K is one more
// than the largest label unless given.
inline Dataset parse_idx(const std::vector<unsigned char>& image_bytes,
                         const std::vector<unsigned char>& label_bytes, std::size_t classes = 0) {
  ByteReader ir(image_bytes), lr(label_bytes);
  auto idims = detail::read_idx_header(ir, kIdxImageMagic, "image");
  auto ldims = detail::read_idx_header(lr, kIdxLabelMagic, "label");
  const std::size_t n = idims[0], h = idims[1], w = idims[2];
  if (ldims[0] != n) {
    throw FormatError("IDX label count " + std::to_string(ldims[0]) + " does not match image count " +
                      std::to_string(n), 4);
  }
  ir.need(n * h * w, "IDX image payload");
  lr.need(n, "IDX label payload");
  Dataset d;
  d.height = h;
  d.width = w;
  d.pixels.resize(n * h * w);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) d.pixels[i] = ir.data()[i] / 255.0;
  std::size_t kmax = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(lr.data()[i]);
    kmax = std::max(kmax, d.labels.back() + 1);
  }
  if (classes && kmax > classes) {
    throw FormatError("IDX label " + std::to_string(kmax - 1) + " out of range for " +
                      std::to_string(classes) + " classes", 8);
  }
  d.classes = classes ? classes : std::max<std::size_t>(kmax, 2);
  d.provenance = "idx";
  return d;
}

inline Dataset load_idx(const std::string& image_path, const std::string& label_path,
                        std::size_t classes = 0) {
  Dataset d = parse_idx(read_file_bytes(image_path), read_file_bytes(label_path), classes);
  d.provenance = "idx:" + image_path;
  return d;
}

// Pixel bytes are round(value * 255), half up.
inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

inline void write_idx(const Dataset& d, const std::string& image_path, const std::string& label_path) {
  if (d.channels != 1) throw std::invalid_argument("write_idx: IDX images are single-channel");
  ByteWriter iw, lw;
  iw.u32_be(kIdxImageMagic);
  iw.u32_be(static_cast<std::uint32_t>(d.size()));
  iw.u32_be(static_cast<std::uint32_t>(d.height));
  iw.u32_be(static_cast<std::uint32_t>(d.width));
  for (double v : d.pixels) iw.u8(quantize(v));
  lw.u32_be(kIdxLabelMagic);
  lw.u32_be(static_cast<std::uint32_t>(d.size()));
  for (std::size_t l : d.labels) {
    if (l > 255) throw std::invalid_argument("write_idx: label does not fit in a byte");
    lw.u8(static_cast<std::uint8_t>(l));
  }
  write_file_bytes(image_path, iw.bytes());
  write_file_bytes(label_path, lw.bytes());
}

// ---------------------------------------------------------------------------
// CIFAR binary: per record `label_bytes` label bytes (the last one is used,
// as in the 100-class fine label) followed by 3x32x32 planar RGB.

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;

inline Dataset parse_cifar_bin(const std::vector<unsigned char>& bytes, std::size_t classes,
                               std::size_t label_bytes = 0) {
  if (classes < 2) throw std::invalid_argument("parse_cifar_bin: K must be at least 2");
  if (label_bytes == 0) label_bytes = classes > 10 ? 2 : 1;
  const std::size_t record = label_bytes + kCifarPixels;
  if (bytes.size() % record != 0) {
    throw FormatError("CIFAR file length " + std::to_string(bytes.size()) +
                      " is not a multiple of the record size " + std::to_string(record),
                      bytes.size() - bytes.size() % record);
  }
  Dataset d;
  d.channels = 3;
  d.height = d.width = 32;
  d.classes = classes;
  const std::size_t n = bytes.size() / record;
  d.pixels.resize(n * kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * record;
    const std::size_t label = rec[label_bytes - 1];
    if (label >= classes) {
      throw FormatError("CIFAR label " + std::to_string(label) + " out of range", i * record);
    }
    d.labels.push_back(label);
    for (std::size_t j = 0; j < kCifarPixels; ++j) d.pixels[i * kCifarPixels + j] = rec[label_bytes + j] / 255.0;
  }
  d.provenance = "cifar";
  return d;
}

inline Dataset load_cifar_bin(const std::string& path, std::size_t classes, std::size_t label_bytes = 0) {
  Dataset d = parse_cifar_bin(read_file_bytes(path), classes, label_bytes);
  d.provenance = "cifar:" + path;
  return d;
}

inline void write_cifar_bin(const Dataset& d, const std::string& path, std::size_t label_bytes = 0) {
  if (d.channels != 3 || d.height != 32 || d.width != 32) {
    throw std::invalid_argument("write_cifar_bin: images must be 3x32x32");
  }
  if (label_bytes == 0) label_bytes = d.classes > 10 ? 2 : 1;
  ByteWriter w;
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t b = 0; b + 1 < label_bytes; ++b) w.u8(0);
    w.u8(static_cast<std::uint8_t>(d.labels[i]));
    for (std::size_t j = 0; j < kCifarPixels; ++j) w.u8(quantize(d.pixels[i * kCifarPixels + j]));
  }
  write_file_bytes(path, w.bytes());
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace detail {

// 5x7 bitmap glyphs: 0-9 then A-Z. Row-major, top row first, bit 4 leftmost.
inline constexpr std::array<std::array<std::uint8_t, 7>, 36> kGlyphs{{
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
    {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // A
    {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},  // B
    {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},  // C
    {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C},  // D
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},  // E
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},  // F
    {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},  // G
    {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // H
    {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},  // I
    {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},  // J
    {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},  // K
    {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},  // L
    {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11},  // M
    {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},  // N
    {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // O
    {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},  // P
    {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D},  // Q
    {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},  // R
    {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E},  // S
    {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},  // T
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // U
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},  // V
    {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A},  // W
    {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},  // X
    {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04},  // Y
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},  // Z
}};

inline bool glyph_on(std::size_t glyph, long row, long col) {
  if (row < 0 || row >= 7 || col < 0 || col >= 5) return false;
  return (kGlyphs[glyph][static_cast<std::size_t>(row)] >> (4 - col)) & 1;
}

// Light digit on a dark background with random scale, offset, slant and
// brightness; 4x4 supersampled coverage.
inline void render_glyph(double* out, std::size_t r, std::size_t glyph, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cell = r * (0.085 + 0.02 * u(rng));  // glyph cell edge in pixels
  const double gw = 5 * cell, gh = 7 * cell;
  const double x0 = (r - gw) / 2 + (u(rng) - 0.5) * 0.12 * r;
  const double y0 = (r - gh) / 2 + (u(rng) - 0.5) * 0.12 * r;
  const double slant = (u(rng) - 0.5) * 0.3;
  const double ink = 0.75 + 0.25 * u(rng);
  const double background = 0.08 * u(rng);
  constexpr int ss = 4;
  for (std::size_t y = 0; y < r; ++y) {
    for (std::size_t x = 0; x < r; ++x) {
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double py = y + (sy + 0.5) / ss - y0;
          const double px = x + (sx + 0.5) / ss - x0 + slant * (py - gh / 2);
          hits += glyph_on(glyph, static_cast<long>(std::floor(py / cell)),
                           static_cast<long>(std::floor(px / cell)));
        }
      }
      const double cover = hits / double(ss * ss);
      out[y * r + x] = background + (ink - background) * cover;
    }
  }
}

// Colored oriented stripes: class fixes the two colors, the orientation and
// the frequency; samples vary phase and contrast.
inline void render_patch(double* out, std::size_t r, std::size_t cls, std::size_t classes,
                         std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::mt19937_64 class_rng(0xC0FFEEULL + cls);
  std::uniform_real_distribution<double> cu(0.0, 1.0);
  double a[3], b[3];
  for (auto& c : a) c = 0.1 + 0.8 * cu(class_rng);
  for (auto& c : b) c = 0.1 + 0.8 * cu(class_rng);
  const double angle = 3.141592653589793 * cls / classes;
  const double freq = (1.5 + 3.0 * cu(class_rng)) * 2 * 3.141592653589793 / r;
  const double phase = 2 * 3.141592653589793 * u(rng);
  const double contrast = 0.7 + 0.3 * u(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < r; ++y) {
    for (std::size_t x = 0; x < r; ++x) {
      const double t = 0.5 + 0.5 * contrast * std::sin(freq * (ca * x + sa * y) + phase);
      for (std::size_t c = 0; c < 3; ++c) out[(c * r + y) * r + x] = a[c] * t + b[c] * (1 - t);
    }
  }
}

}  // namespace detail

class UnsupportedDatasetKind : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// kind "digits": single-channel glyph images (K <= 36).
// kind "patches": three-channel stripe patterns.
// Labels cycle through the classes so every class is represented.
inline Dataset synthetic_dataset(const std::string& kind, std::size_t n, std::size_t classes,
                                 std::size_t resolution, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("synthetic_dataset: K must be at least 2");
  if (resolution < 8) throw std::invalid_argument("synthetic_dataset: resolution must be at least 8");
  Dataset d;
  d.height = d.width = resolution;
  d.classes = classes;
  std::mt19937_64 rng(seed);
  if (kind == "digits") {
    if (classes > detail::kGlyphs.size()) {
      throw std::invalid_argument("synthetic_dataset: digits support at most 36 classes");
    }
    d.channels = 1;
  } else if (kind == "patches") {
    d.channels = 3;
  } else {
    throw UnsupportedDatasetKind("unsupported synthetic dataset kind '" + kind +
                                 "' (expected digits or patches)");
  }
  d.pixels.resize(n * d.image_size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % classes;
    d.labels.push_back(cls);
    double* out = d.pixels.data() + i * d.image_size();
    if (d.channels == 1) {
      detail::render_glyph(out, resolution, cls, rng);
    } else {
      detail::render_patch(out, resolution, cls, classes, rng);
    }
  }
  d.provenance = "synthetic:" + kind + ":seed=" + std::to_string(seed);
  return d;
}

}  // namespace grnn
