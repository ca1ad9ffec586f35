#include <gtest/gtest.h>

#include <random>

#include "grnn/generator.hpp"
#include "support/gradcheck.hpp"

using namespace grnn;
using grnn::testing::gradcheck;
using grnn::testing::random_values;

namespace {

GeneratorConfig small_config(std::size_t r, std::size_t c = 1, std::size_t k = 10) {
  GeneratorConfig cfg;
  cfg.resolution = r;
  cfg.image_channels = c;
  cfg.classes = k;
  cfg.latent_dim = 16;
  cfg.width = 8;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(BuildGenerator, BlockCountFollowsResolution) {
  EXPECT_EQ(upsample_block_count(8), 1u);
  EXPECT_EQ(upsample_block_count(32), 3u);
  EXPECT_EQ(upsample_block_count(256), 6u);
  EXPECT_EQ(build_generator(small_config(32)).block_count(), 3u);
}

TEST(BuildGenerator, RejectsUnsupportedResolution) {
  for (std::size_t r : {0u, 4u, 12u, 48u, 512u}) {
    EXPECT_THROW(upsample_block_count(r), std::invalid_argument) << r;
  }
}

TEST(BuildGenerator, DefaultWidthDependsOnResolution) {
  GeneratorConfig cfg;
  cfg.resolution = 64;
  EXPECT_EQ(cfg.base_width(), 32u);
  cfg.resolution = 128;
  EXPECT_EQ(cfg.base_width(), 16u);
  cfg.resolution = 32;
  auto g = build_generator(cfg);
  EXPECT_EQ(g.latent_weight.shape(), (Shape{128, 256, 4, 4}));
  EXPECT_EQ(g.blocks[2].weight.shape(), (Shape{64, 64, 3, 3}));
  EXPECT_EQ(g.out_weight.shape(), (Shape{1, 32, 3, 3}));
}

TEST(BuildGenerator, SameSeedSameParameters) {
  auto a = build_generator(small_config(16)), b = build_generator(small_config(16));
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].vec(), pb[i].vec());
}

TEST(Generate, ShapesAndLabelNormalization) {
  GeneratorConfig cfg = small_config(32, 3, 100);
  cfg.width = 32;
  cfg.latent_dim = 128;
  auto g = build_generator(cfg);
  auto out = generate(g, LatentBatch::sample(4, 128, 1));
  EXPECT_EQ(out.images.shape(), (Shape{4, 3, 32, 32}));
  EXPECT_EQ(out.label_probs.shape(), (Shape{4, 100}));
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 100; ++k) s += out.label_probs.at(i * 100 + k);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  for (double v : out.images.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Generate, EverySupportedResolutionEmitsSquareImages) {
  for (std::size_t r : {8u, 16u, 32u, 64u}) {
    auto g = build_generator(small_config(r));
    EXPECT_EQ(g.block_count(), upsample_block_count(r));
    auto out = generate(g, LatentBatch::sample(2, 16, r));
    EXPECT_EQ(out.images.shape(), (Shape{2, 1, r, r}));
  }
}

TEST(Generate, IdenticalLatentRowsGiveIdenticalSamples) {
  auto g = build_generator(small_config(16));
  auto one = LatentBatch::sample(1, 16, 9).values;
  auto out = generate(g, {concat({one, one, one}, 0)});
  const std::size_t img = 16 * 16, k = 10;
  for (std::size_t b = 1; b < 3; ++b) {
    for (std::size_t i = 0; i < img; ++i) EXPECT_EQ(out.images.at(b * img + i), out.images.at(i));
    for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(out.label_probs.at(b * k + i), out.label_probs.at(i));
  }
}

TEST(Generate, ZeroImageBranchGivesHalfGray) {
  auto g = build_generator(small_config(16));
  auto zero = [](const Tensor& t) { return Tensor::zeros(t.shape()); };
  g.latent_weight = zero(g.latent_weight);
  g.latent_bias = zero(g.latent_bias);
  for (auto& b : g.blocks) {
    b.weight = zero(b.weight);
    b.gamma = zero(b.gamma);
    b.beta = zero(b.beta);
  }
  g.out_weight = zero(g.out_weight);
  g.out_bias = zero(g.out_bias);
  auto out = generate(g, LatentBatch::sample(2, 16, 4));
  for (double v : out.images.values()) EXPECT_EQ(v, 0.5);
}

TEST(Generate, IsDeterministic) {
  auto g = build_generator(small_config(16));
  auto v = LatentBatch::sample(3, 16, 2);
  EXPECT_EQ(generate(g, v).images.vec(), generate(g, v).images.vec());
}

TEST(Generate, RejectsLatentWidthMismatch) {
  auto g = build_generator(small_config(16));
  EXPECT_THROW(generate(g, LatentBatch::sample(2, 15, 0)), ShapeError);
}

TEST(LatentBatch, SameSeedSameRows) {
  EXPECT_EQ(LatentBatch::sample(2, 8, 5).values.vec(), LatentBatch::sample(2, 8, 5).values.vec());
}

TEST(UpsampleBlock, HalvesChannelsDoublesExtent) {
  UpsampleBlockParams p{Tensor::zeros({64, 64, 3, 3}), Tensor::ones({64}), Tensor::zeros({64})};
  std::mt19937_64 rng(1);
  Tensor x({1, 64, 4, 4}, random_values(64 * 16, rng));
  Tensor y = upsample_block(x, p);
  EXPECT_EQ(y.shape(), (Shape{1, 32, 8, 8}));
  // Zero convolution and beta: 0 * sigmoid(0).
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(UpsampleBlock, OddConvolutionOutputRejected) {
  UpsampleBlockParams p{Tensor::zeros({3, 4, 3, 3}), Tensor::ones({3}), Tensor::zeros({3})};
  EXPECT_THROW(upsample_block(Tensor::zeros({1, 4, 2, 2}), p), ShapeError);
}

TEST(UpsampleBlock, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Shape xs{2, 4, 2, 2}, ws{4, 4, 3, 3};
  auto x = random_values(numel(xs), rng);
  auto w = random_values(numel(ws), rng, -0.5, 0.5);
  auto gm = random_values(4, rng, 0.5, 1.5), bt = random_values(4, rng);
  Tensor weights({2, 2, 4, 4}, random_values(2 * 2 * 16, rng));
  auto f = [&](const std::vector<Tensor>& p) {
    return sum(mul(weights, upsample_block(p[0], {p[1], p[2], p[3]})));
  };
  EXPECT_LT(gradcheck(f, {xs, ws, {4}, {4}}, {x, w, gm, bt}), 1e-5);
}

TEST(WithParameters, RebuildsInOrder) {
  auto g = build_generator(small_config(16));
  auto params = g.parameters();
  EXPECT_EQ(params.size(), 6 + 3 * g.block_count());
  auto same = g.with_parameters(params).parameters();
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(same[i].vec(), params[i].vec());
  params.pop_back();
  EXPECT_THROW(g.with_parameters(params), ShapeError);
}
