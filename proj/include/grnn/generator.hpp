#pragma once

// Two-branch generative model: the image branch grows a latent row into an
// image through a fractionally-strided convolution and a stack of upsampling
// blocks; the label branch maps the same latent row to a class distribution.
//
// Image branch for resolution R (power of two, 8 <= R <= 256):
//   latent (B,D) viewed as (B,D,1,1)
//   transposed conv 4x4, stride 1, pad 0   -> (B, 8m, 4, 4)
//   log2(R/4) upsampling blocks, each:
//     nearest x2, conv 3x3 s1 p1 keeping channels, batch norm, GLU (halves channels)
//   conv 3x3 s1 p1 -> image channels, sigmoid
// m = 32 for R <= 64 and 16 above, unless overridden.
//
// Label branch: affine D -> K followed by softmax.

#include <cstdint>
#include <random>

#include "grnn/nn.hpp"

namespace grnn {

struct GeneratorConfig {
  std::size_t resolution = 32;
  std::size_t image_channels = 1;
  std::size_t classes = 10;
  std::size_t latent_dim = 128;
  // Base width m; zero selects the resolution-dependent default.
  std::size_t width = 0;
  std::uint64_t seed = 0;

  std::size_t base_width() const { return width ? width : (resolution <= 64 ? 32 : 16); }
};

struct UpsampleBlockParams {
  Tensor weight;  // (C, C, 3, 3)
  Tensor gamma;   // (C)
  Tensor beta;    // (C)
};

struct GeneratorState {
  GeneratorConfig config;
  Tensor latent_weight;  // (D, 8m, 4, 4), transposed-conv layout
  Tensor latent_bias;    // (8m)
  std::vector<UpsampleBlockParams> blocks;
  Tensor out_weight;     // (m', C_img, 3, 3) where m' is the last block's channel count
  Tensor out_bias;       // (C_img)
  Tensor label_weight;   // (K, D)
  Tensor label_bias;     // (K)

  std::size_t block_count() const { return blocks.size(); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> p{latent_weight, latent_bias};
    for (const auto& b : blocks) {
      p.push_back(b.weight);
      p.push_back(b.gamma);
      p.push_back(b.beta);
    }
    p.insert(p.end(), {out_weight, out_bias, label_weight, label_bias});
    return p;
  }

  // Same structure, new parameter tensors in parameters() order.
  GeneratorState with_parameters(const std::vector<Tensor>& p) const {
    if (p.size() != 6 + 3 * blocks.size()) throw ShapeError("with_parameters: count mismatch");
    GeneratorState s = *this;
    std::size_t i = 0;
    s.latent_weight = p[i++];
    s.latent_bias = p[i++];
    for (auto& b : s.blocks) {
      b.weight = p[i++];
      b.gamma = p[i++];
      b.beta = p[i++];
    }
    s.out_weight = p[i++];
    s.out_bias = p[i++];
    s.label_weight = p[i++];
    s.label_bias = p[i++];
    return s;
  }
};

// Latent rows sampled once from the unit Gaussian and then frozen.
struct LatentBatch {
  Tensor values;  // (B, D)

  std::size_t batch() const { return values.dim(0); }

  static LatentBatch sample(std::size_t batch, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(batch * dim);
    for (auto& x : v) x = normal(rng);
    return {Tensor({batch, dim}, std::move(v))};
  }
};

inline std::size_t upsample_block_count(std::size_t resolution) {
  if (resolution < 8 || resolution > 256 || (resolution & (resolution - 1))) {
    throw std::invalid_argument("generator resolution must be a power of two in [8, 256], got " +
                                std::to_string(resolution));
  }
  std::size_t n = 0;
  for (std::size_t r = 4; r < resolution; r *= 2) ++n;
  return n;
}

inline GeneratorState build_generator(const GeneratorConfig& cfg) {
  const std::size_t nblocks = upsample_block_count(cfg.resolution);
  if (cfg.image_channels == 0 || cfg.classes < 2 || cfg.latent_dim == 0) {
    throw std::invalid_argument("build_generator: invalid channel, class or latent size");
  }
  std::size_t ch = 8 * cfg.base_width();
  if (ch >> nblocks == 0 || (ch % (std::size_t{1} << nblocks)) != 0) {
    throw std::invalid_argument("build_generator: base width too small for " +
                                std::to_string(nblocks) + " blocks");
  }
  std::mt19937_64 rng(cfg.seed);
  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::parameter(std::move(shape), std::move(v));
  };

  GeneratorState s;
  s.config = cfg;
  const std::size_t d = cfg.latent_dim;
  // For a transposed convolution every output pixel sees all D inputs once.
  s.latent_weight = uniform({d, ch, 4, 4}, d);
  s.latent_bias = uniform({ch}, d);
  for (std::size_t b = 0; b < nblocks; ++b) {
    UpsampleBlockParams p;
    p.weight = uniform({ch, ch, 3, 3}, ch * 9);
    p.gamma = Tensor::parameter({ch}, std::vector<double>(ch, 1.0));
    p.beta = Tensor::parameter({ch}, std::vector<double>(ch, 0.0));
    s.blocks.push_back(std::move(p));
    ch /= 2;
  }
  s.out_weight = uniform({cfg.image_channels, ch, 3, 3}, ch * 9);
  s.out_bias = uniform({cfg.image_channels}, ch * 9);
  s.label_weight = uniform({cfg.classes, d}, d);
  s.label_bias = uniform({cfg.classes}, d);
  return s;
}

// Nearest x2, 3x3 convolution, batch norm (batch statistics), GLU.
inline Tensor upsample_block(const Tensor& input, const UpsampleBlockParams& p) {
  if (p.weight.dim(0) % 2 != 0) {
    throw ShapeError("upsample_block: convolution emits an odd channel count " +
                     std::to_string(p.weight.dim(0)));
  }
  Tensor h = conv2d(nearest_upsample(input, 2), p.weight, 1, 1);
  h = batchnorm2d(h, p.gamma, p.beta);
  return glu(h, 1);
}

struct Generation {
  Tensor images;       // (B, C, R, R), values in (0, 1)
  Tensor label_probs;  // (B, K), rows sum to one
};

inline Generation generate(const GeneratorState& s, const LatentBatch& v) {
  const auto& cfg = s.config;
  if (v.values.rank() != 2 || v.values.dim(1) != cfg.latent_dim) {
    throw ShapeError("generate: latent batch " + to_string(v.values.shape()) +
                     " does not have " + std::to_string(cfg.latent_dim) + " columns");
  }
  const std::size_t b = v.batch();
  Tensor h = reshape(v.values, {b, cfg.latent_dim, 1, 1});
  h = add_channel_bias(transposed_conv2d(h, s.latent_weight, 1, 0), s.latent_bias);
  for (const auto& block : s.blocks) h = upsample_block(h, block);
  Tensor images = sigmoid(add_channel_bias(conv2d(h, s.out_weight, 1, 1), s.out_bias));
  Tensor labels = softmax(linear(v.values, s.label_weight, s.label_bias));
  return {images, labels};
}

}  // namespace grnn
