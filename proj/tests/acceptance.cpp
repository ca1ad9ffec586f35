// Acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance            run all criteria
//   acceptance 2 6        run a subset
//
// Exit status is nonzero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "grnn/attack.hpp"
#include "grnn/cli.hpp"
#include "grnn/dataset.hpp"
#include "grnn/defense.hpp"
#include "grnn/flsim.hpp"
#include "grnn/image_io.hpp"
#include "grnn/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace grnn;
using grnn::testing::gradcheck;
using grnn::testing::random_nonzero;
using grnn::testing::random_values;
using grnn::testing::relative_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Shared attack scenario: lenet-variant after one FL round on synthetic digits,
// attacked on a batch drawn from the same data.

struct Scenario {
  GlobalModel model;
  ClientBatch victim;
  GradientVector gradient;
};

Dataset digits(std::size_t resolution, std::uint64_t seed = 1) {
  return synthetic_dataset("digits", 200, 10, resolution, seed);
}

Scenario scenario(const Dataset& data, std::size_t batch, std::uint64_t seed) {
  Scenario s;
  GlobalModel m = build_model("lenet-variant", {data.channels, data.height, data.width}, 10, seed);
  FLConfig fl;
  fl.clients = 4;
  fl.batch_size = 8;
  fl.lr = 0.05;
  fl.rounds = 1;
  fl.seed = seed;
  s.model = simulate(m, data, fl, {}, false).model;
  std::vector<std::size_t> index;
  if (batch == 1) {
    index = {(seed * 37) % data.size()};
  } else {
    const auto perm = seeded_permutation(data.size(), seed ^ 0xBA7C4ULL);
    index.assign(perm.begin(), perm.begin() + static_cast<long>(batch));
  }
  s.victim = ClientBatch::from_dataset(data, index);
  s.gradient = local_gradient(s.model, s.victim);
  return s;
}

AttackConfig attack_config(std::size_t batch, std::size_t iterations, std::uint64_t seed) {
  AttackConfig a;
  a.batch_size = batch;
  a.iterations = iterations;
  a.seed = seed;
  a.snapshot_every = 0;
  return a;
}

struct Scored {
  MatchResult match;
  double label_accuracy = 0.0;
  Tensor images;
};

Scored score(const AttackReport& r, const ClientBatch& victim) {
  Scored s;
  s.images = Tensor(r.image_shape, r.images);
  s.match = match_batch(s.images, victim.images);
  s.label_accuracy = label_accuracy(r.label_probs, r.classes, batch_labels(victim), s.match);
  return s;
}

// ---------------------------------------------------------------------------
// 1. Finite-difference checks of every differentiable op.

struct OpCase {
  std::string name;
  // Draws input shapes and values for one random case.
  std::function<std::pair<std::vector<Shape>, std::vector<std::vector<double>>>(std::mt19937_64&)> draw;
  std::function<Tensor(const std::vector<Tensor>&)> op;
};

Shape random_shape(std::mt19937_64& rng, std::size_t min_rank = 1, std::size_t max_rank = 4) {
  std::uniform_int_distribution<std::size_t> rank(min_rank, max_rank), dim(1, 4);
  Shape s(rank(rng));
  for (auto& d : s) d = dim(rng);
  return s;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

using Draw = std::pair<std::vector<Shape>, std::vector<std::vector<double>>>;

Draw unary(std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  const Shape s = random_shape(rng);
  return {{s}, {random_values(numel(s), rng, lo, hi)}};
}
Draw unary_nonzero(std::mt19937_64& rng) {
  const Shape s = random_shape(rng);
  return {{s}, {random_nonzero(numel(s), rng)}};
}
Draw binary(std::mt19937_64& rng, bool nonzero_second = false) {
  const Shape s = random_shape(rng);
  return {{s, s}, {random_values(numel(s), rng), nonzero_second ? random_nonzero(numel(s), rng) : random_values(numel(s), rng)}};
}
Draw nchw(std::mt19937_64& rng, std::size_t c_mult = 1, std::size_t hw_mult = 1) {
  const Shape s{pick(rng, 1, 3), c_mult * pick(rng, 1, 3), hw_mult * pick(rng, 1, 3), hw_mult * pick(rng, 1, 3)};
  return {{s}, {random_values(numel(s), rng)}};
}

// The true gradient is a constant in the gradient-matching losses.
Tensor fixed_target(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::sin(1.3 * static_cast<double>(i) + 0.2);
  return Tensor({n}, v);
}

std::vector<OpCase> op_catalog() {
  std::vector<OpCase> ops;
  auto add_op = [&](std::string name, auto draw, auto op) { ops.push_back({std::move(name), draw, op}); };
  using P = const std::vector<Tensor>&;

  add_op("neg", [](auto& r) { return unary(r); }, [](P p) { return neg(p[0]); });
  add_op("scale", [](auto& r) { return unary(r); }, [](P p) { return scale(p[0], -1.7); });
  add_op("add_scalar", [](auto& r) { return unary(r); }, [](P p) { return add_scalar(p[0], 0.3); });
  add_op("square", [](auto& r) { return unary(r); }, [](P p) { return square(p[0]); });
  add_op("abs", [](auto& r) { return unary_nonzero(r); }, [](P p) { return abs(p[0]); });
  add_op("exp", [](auto& r) { return unary(r); }, [](P p) { return exp(p[0]); });
  add_op("log", [](auto& r) { return unary(r, 0.3, 2.0); }, [](P p) { return log(p[0]); });
  add_op("sqrt", [](auto& r) { return unary(r, 0.3, 2.0); }, [](P p) { return sqrt(p[0]); });
  add_op("sigmoid", [](auto& r) { return unary(r, -3.0, 3.0); }, [](P p) { return sigmoid(p[0]); });
  add_op("add", [](auto& r) { return binary(r); }, [](P p) { return add(p[0], p[1]); });
  add_op("sub", [](auto& r) { return binary(r); }, [](P p) { return sub(p[0], p[1]); });
  add_op("mul", [](auto& r) { return binary(r); }, [](P p) { return mul(p[0], p[1]); });
  add_op("div", [](auto& r) { return binary(r, true); }, [](P p) { return div(p[0], p[1]); });
  add_op("dot", [](auto& r) { return binary(r); }, [](P p) { return dot(p[0], p[1]); });
  add_op("sum", [](auto& r) { return unary(r); }, [](P p) { return sum(p[0]); });
  add_op("mean", [](auto& r) { return unary(r); }, [](P p) { return mean(p[0]); });
  add_op("reshape", [](auto& r) { return unary(r); }, [](P p) { return reshape(p[0], {p[0].numel(), 1}); });
  add_op("flatten", [](auto& r) { return unary(r); }, [](P p) { return flatten(p[0]); });
  add_op(
      "broadcast_to",
      [](auto& r) {
        // Size-1 axes expand to a random extent.
        Shape s = random_shape(r, 2, 4);
        for (auto& d : s) d = r() % 2 ? 1 : d;
        return Draw{{s}, {random_values(numel(s), r)}};
      },
      [](P p) {
        Shape to = p[0].shape();
        for (auto& d : to) d = d == 1 ? 3 : d;
        return broadcast_to(p[0], to);
      });
  add_op(
      "sum_to", [](auto& r) { return Draw{{{pick(r, 1, 4), pick(r, 1, 4), pick(r, 1, 4)}}, {}}; },
      [](P p) { return sum_to(p[0], {1, p[0].dim(1), 1}); });
  add_op(
      "transpose", [](auto& r) { return Draw{{{pick(r, 1, 5), pick(r, 1, 5)}}, {}}; },
      [](P p) { return transpose(p[0]); });
  add_op(
      "slice", [](auto& r) { return Draw{{random_shape(r, 1, 4)}, {}}; },
      [](P p) {
        const std::size_t axis = p[0].rank() - 1, n = p[0].dim(axis);
        return slice(p[0], axis, n / 2, n);
      });
  add_op(
      "pad_axis", [](auto& r) { return Draw{{random_shape(r, 1, 4)}, {}}; },
      [](P p) { return pad_axis(p[0], 0, 1, p[0].dim(0) + 3); });
  add_op(
      "concat",
      [](auto& r) {
        Shape a = random_shape(r, 2, 4), b = a;
        b[1] = pick(r, 1, 4);
        return Draw{{a, b}, {}};
      },
      [](P p) { return concat({p[0], p[1]}, 1); });
  add_op(
      "gather", [](auto& r) { return Draw{{{pick(r, 2, 12)}}, {}}; },
      [](P p) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < 2 * p[0].numel(); ++i) idx.push_back((i * 7 + 3) % p[0].numel());
        return gather(p[0], idx);
      });
  add_op(
      "scatter_add", [](auto& r) { return Draw{{{pick(r, 2, 12)}}, {}}; },
      [](P p) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < p[0].numel(); ++i) idx.push_back((i * 5 + 1) % 4);
        return scatter_add(p[0], idx, 4);
      });
  add_op(
      "sort", [](auto& r) { return Draw{{{pick(r, 2, 24)}}, {}}; }, [](P p) { return sort(p[0]); });
  add_op(
      "matmul",
      [](auto& r) {
        const std::size_t n = pick(r, 1, 4), k = pick(r, 1, 4), m = pick(r, 1, 4);
        return Draw{{{n, k}, {k, m}}, {}};
      },
      [](P p) { return matmul(p[0], p[1]); });
  add_op(
      "linear",
      [](auto& r) {
        const std::size_t n = pick(r, 1, 4), k = pick(r, 1, 4), m = pick(r, 1, 4);
        return Draw{{{n, k}, {m, k}, {m}}, {}};
      },
      [](P p) { return linear(p[0], p[1], p[2]); });
  add_op(
      "conv2d",
      [](auto& r) {
        const std::size_t k = pick(r, 1, 3);
        const Shape in{pick(r, 1, 2), pick(r, 1, 3), k + pick(r, 0, 4), k + pick(r, 0, 4)};
        return Draw{{in, {pick(r, 1, 3), in[1], k, k}}, {}};
      },
      [](P p) {
        // Stride and padding vary with the drawn extents.
        const std::size_t stride = 1 + p[0].dim(2) % 2, padding = p[1].dim(2) / 2;
        return conv2d(p[0], p[1], stride, padding);
      });
  add_op(
      "transposed_conv2d",
      [](auto& r) {
        const Shape in{pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 4), pick(r, 1, 4)};
        const std::size_t k = pick(r, 1, 4);
        return Draw{{in, {in[1], pick(r, 1, 3), k, k}}, {}};
      },
      [](P p) {
        const std::size_t stride = 1 + p[0].dim(2) % 2;
        return transposed_conv2d(p[0], p[1], stride, 0);
      });
  add_op(
      "add_channel_bias",
      [](auto& r) {
        const Shape in{pick(r, 1, 3), pick(r, 1, 3), pick(r, 1, 3), pick(r, 1, 3)};
        return Draw{{in, {in[1]}}, {}};
      },
      [](P p) { return add_channel_bias(p[0], p[1]); });
  add_op("sum_pool", [](auto& r) { return nchw(r, 1, 2); }, [](P p) { return sum_pool(p[0], 2); });
  add_op("avg_pool", [](auto& r) { return nchw(r, 1, 2); }, [](P p) { return avg_pool(p[0], 2); });
  add_op("nearest_upsample", [](auto& r) { return nchw(r); }, [](P p) { return nearest_upsample(p[0], 2); });
  add_op("glu", [](auto& r) { return nchw(r, 2); }, [](P p) { return glu(p[0]); });
  add_op(
      "batchnorm2d",
      [](auto& r) {
        // At least two values per channel so the variance is informative.
        const Shape in{pick(r, 1, 3), pick(r, 1, 3), pick(r, 1, 3), pick(r, 2, 3)};
        return Draw{{in, {in[1]}, {in[1]}}, {}};
      },
      [](P p) { return batchnorm2d(p[0], p[1], p[2]); });
  add_op(
      "softmax", [](auto& r) { return Draw{{{pick(r, 1, 4), pick(r, 2, 6)}}, {}}; },
      [](P p) { return softmax(p[0]); });
  add_op(
      "log_softmax", [](auto& r) { return Draw{{{pick(r, 1, 4), pick(r, 2, 6)}}, {}}; },
      [](P p) { return log_softmax(p[0]); });
  add_op(
      "softmax_cross_entropy",
      [](auto& r) {
        const Shape s{pick(r, 1, 4), pick(r, 2, 6)};
        return Draw{{s, s}, {}};
      },
      [](P p) { return softmax_cross_entropy(p[0], softmax(p[1])); });
  add_op(
      "upsample_block",
      [](auto& r) {
        const std::size_t c = 2 * pick(r, 1, 2);
        return Draw{{{pick(r, 1, 2), c, pick(r, 1, 3), pick(r, 1, 3)}, {c, c, 3, 3}, {c}, {c}}, {}};
      },
      [](P p) { return upsample_block(p[0], {p[1], p[2], p[3]}); });
  add_op("tv_loss", [](auto& r) { return nchw(r, 1, 2); }, [](P p) { return tv_loss(p[0]); });
  add_op(
      "mse_grad_loss", [](auto& r) { return Draw{{{pick(r, 2, 20)}}, {}}; },
      [](P p) { return mse_grad_loss(fixed_target(p[0].numel()), p[0]); });
  add_op(
      "wd_grad_loss", [](auto& r) { return Draw{{{pick(r, 2, 20)}}, {}}; },
      [](P p) { return wd_grad_loss(fixed_target(p[0].numel()), p[0]); });
  add_op(
      "cd_grad_loss", [](auto& r) { return Draw{{{pick(r, 2, 20)}}, {}}; },
      [](P p) { return cd_grad_loss(fixed_target(p[0].numel()), p[0]); });
  return ops;
}

Outcome criterion1() {
  std::mt19937_64 rng(20240601);
  double worst = 0.0;
  std::string worst_op;
  std::size_t cases = 0;
  for (const auto& op : op_catalog()) {
    for (int t = 0; t < 20; ++t) {
      auto [shapes, values] = op.draw(rng);
      if (values.empty()) {
        for (const auto& s : shapes) values.push_back(random_values(numel(s), rng));
      }
      // Project the output on fixed random weights so that every output entry matters.
      std::vector<Tensor> inputs;
      for (std::size_t i = 0; i < shapes.size(); ++i) inputs.push_back(Tensor(shapes[i], values[i]));
      const Shape out_shape = op.op(inputs).shape();
      const Tensor w(out_shape, random_values(numel(out_shape), rng));
      auto f = [&](const std::vector<Tensor>& p) { return sum(mul(op.op(p), w)); };
      double err = 0.0;
      try {
        err = gradcheck(f, shapes, values);
      } catch (const std::exception& e) {
        throw std::runtime_error(op.name + ": " + e.what());
      }
      ++cases;
      if (!(err <= worst)) {
        worst = err;
        worst_op = op.name;
      }
    }
  }

  // Second order: s(theta) = ||dL/dtheta||^2 on small random networks.
  double worst2 = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = pick(rng, 1, 3), c = pick(rng, 1, 2), hw = pick(rng, 3, 5), k = pick(rng, 2, 4);
    const Tensor x({n, c, hw, hw}, random_values(n * c * hw * hw, rng));
    const Tensor y = softmax(Tensor({n, k}, random_values(n * k, rng)));
    const std::size_t feat = 2 * hw * hw;
    const std::vector<Shape> shapes{{2, c, 3, 3}, {2}, {k, feat}, {k}};
    std::vector<std::vector<double>> values;
    for (const auto& s : shapes) values.push_back(random_values(numel(s), rng));
    auto loss = [&](const std::vector<Tensor>& p) {
      Tensor h = sigmoid(add_channel_bias(conv2d(x, p[0], 1, 1), p[1]));
      return softmax_cross_entropy(linear(reshape(h, {n, feat}), p[2], p[3]), y);
    };
    auto grad_norm = [&](const std::vector<Tensor>& p, bool retain) {
      const auto g = grad(loss(p), p, retain);
      Tensor acc = Tensor::scalar(0.0);
      for (const auto& gi : g) acc = add(acc, sum(square(gi)));
      return acc;
    };
    std::vector<Tensor> params;
    for (std::size_t i = 0; i < shapes.size(); ++i) params.push_back(Tensor::parameter(shapes[i], values[i]));
    const auto analytic = grad(grad_norm(params, true), params);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      std::vector<double> numeric(values[i].size());
      for (std::size_t j = 0; j < values[i].size(); ++j) {
        auto up = values, down = values;
        up[i][j] += 1e-5;
        down[i][j] -= 1e-5;
        auto eval = [&](const std::vector<std::vector<double>>& v) {
          std::vector<Tensor> p;
          for (std::size_t q = 0; q < shapes.size(); ++q) p.push_back(Tensor::parameter(shapes[q], v[q]));
          return grad_norm(p, false).item();
        };
        numeric[j] = (eval(up) - eval(down)) / 2e-5;
      }
      worst2 = std::max(worst2, relative_error(analytic[i].vec(), numeric));
    }
  }
  const bool pass = worst <= 1e-5 && worst2 <= 1e-4;
  return {pass, std::to_string(cases) + " first-order cases, worst " + fmt(worst, 3) + " (" + worst_op +
                    "); second-order worst " + fmt(worst2, 3)};
}

// ---------------------------------------------------------------------------
// 2. Batch-1 recovery at 32x32.

Outcome criterion2() {
  const Dataset data = digits(32);
  std::size_t good = 0;
  std::string list;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Scenario s = scenario(data, 1, seed);
    const Scored r = score(grnn_attack(s.gradient, s.model, attack_config(1, 1000, seed)), s.victim);
    const double p = r.match.mean(MatchMetric::Psnr);
    good += p >= 30.0;
    list += (list.empty() ? "" : " ") + fmt(p, 3);
  }
  return {good >= 8, std::to_string(good) + "/10 seeds >= 30 dB; PSNR " + list};
}

// ---------------------------------------------------------------------------
// 3. Label inference by the generator's label branch.

Outcome criterion3() {
  const Dataset data = digits(16);
  std::size_t correct1 = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Scenario s = scenario(data, 1, seed);
    correct1 += score(grnn_attack(s.gradient, s.model, attack_config(1, 300, seed)), s.victim).label_accuracy == 1.0;
  }
  std::vector<double> acc4;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Scenario s = scenario(data, 4, seed);
    acc4.push_back(score(grnn_attack(s.gradient, s.model, attack_config(4, 300, seed)), s.victim).label_accuracy);
  }
  const double m4 = mean_of(acc4);
  return {correct1 == 20 && m4 >= 0.95,
          "batch 1: " + std::to_string(correct1) + "/20 correct; batch 4: mean " + fmt(100 * m4, 4) + "%"};
}

// ---------------------------------------------------------------------------
// 4. GRNN vs DLG at batch 16 under the same budget and seeds.

Outcome criterion4() {
  const Dataset data = digits(16);
  constexpr std::size_t kIterations = 1000;
  std::vector<double> grnn_ssim, dlg_ssim;
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    const Scenario s = scenario(data, 16, seed);
    const AttackConfig cfg = attack_config(16, kIterations, seed);
    grnn_ssim.push_back(score(grnn_attack(s.gradient, s.model, cfg), s.victim).match.mean(MatchMetric::Ssim));
    dlg_ssim.push_back(score(dlg_attack(s.gradient, s.model, cfg), s.victim).match.mean(MatchMetric::Ssim));
  }
  const double g = mean_of(grnn_ssim), d = mean_of(dlg_ssim);
  return {g >= 0.6 && d < 0.3, "GRNN SSIM " + fmt(g) + ", DLG SSIM " + fmt(d) + " (" +
                                   std::to_string(grnn_ssim.size()) + " seeds, " + std::to_string(kIterations) +
                                   " iterations)"};
}

// ---------------------------------------------------------------------------
// 5. iDLG sign rule.

Outcome criterion5() {
  std::mt19937_64 rng(5005);
  std::size_t ok = 0;
  for (int t = 0; t < 1000; ++t) {
    const GlobalModel m = build_model("lenet-variant", {1, 16, 16}, 10, rng());
    const std::size_t label = rng() % 10;
    const Tensor x({1, 1, 16, 16}, random_values(256, rng, 0.0, 1.0));
    const GradientVector g = local_gradient(m, {x, one_hot({label}, 10)});
    const LabelInference r = idlg_label(g, m);
    ok += r.label == label && r.confident;
  }
  return {ok == 1000, std::to_string(ok) + "/1000 labels recovered"};
}

// ---------------------------------------------------------------------------
// 6. Gaussian noise sweep.

Outcome criterion6() {
  const Dataset data = digits(16);
  const std::vector<double> sigmas{1e-1, 1e-2, 1e-3, 1e-4};
  std::vector<std::vector<double>> psnr(sigmas.size());
  std::size_t inversions = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Scenario s = scenario(data, 1, seed);
    const AttackConfig cfg = attack_config(1, 1000, seed);
    std::vector<double> row;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      const CellResult c = sweep_cell(s.model, s.victim, s.gradient, NoiseFamily::Gaussian, sigmas[i], cfg, seed);
      row.push_back(c.cell.psnr);
      psnr[i].push_back(c.cell.psnr);
    }
    // PSNR should not drop as the noise shrinks.
    for (std::size_t i = 1; i < row.size(); ++i) inversions += row[i] < row[i - 1];
  }
  const double high = mean_of(psnr.front()), low = mean_of(psnr.back());
  std::string means;
  for (std::size_t i = 0; i < sigmas.size(); ++i) means += " " + fmt(sigmas[i], 1) + ":" + fmt(mean_of(psnr[i]), 3);
  return {high < 20.0 && low >= 30.0 && inversions <= 1,
          "mean PSNR by sigma" + means + "; " + std::to_string(inversions) + " inversions over 5 seeds"};
}

// ---------------------------------------------------------------------------
// 7. Assignment oracle.

Outcome criterion7() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t ok = 0, total = 0;
  for (std::size_t n = 2; n <= 6; ++n) {
    for (int t = 0; t < 100; ++t) {
      std::vector<double> cost(n * n);
      // Every third instance uses small integers so that ties occur.
      for (auto& c : cost) c = t % 3 == 0 ? static_cast<double>(rng() % 4) : u(rng);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      double best = std::numeric_limits<double>::infinity();
      do {
        best = std::min(best, assignment_cost(cost, n, perm));
      } while (std::next_permutation(perm.begin(), perm.end()));
      const auto found = optimal_assignment(cost, n);
      ok += assignment_cost(cost, n, found) == best;
      ++total;
    }
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " instances match exhaustive search"};
}

// ---------------------------------------------------------------------------
// 8. Loss-term properties.

Outcome criterion8() {
  std::mt19937_64 rng(88);
  std::size_t failures = 0, checks = 0;
  auto check = [&](bool ok) {
    ++checks;
    failures += !ok;
  };
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = pick(rng, 1, 64);
    const Tensor a({n}, random_values(n, rng)), b({n}, random_values(n, rng));
    // mse
    check(mse_grad_loss(a, a).item() == 0.0);
    auto c = a.vec();
    c[rng() % n] += 1e-3;
    check(mse_grad_loss(a, Tensor({n}, c)).item() > 0.0);
    // wd under independent permutations of either argument
    auto pa = a.vec(), pb = b.vec();
    std::shuffle(pa.begin(), pa.end(), rng);
    std::shuffle(pb.begin(), pb.end(), rng);
    const double wd = wd_grad_loss(a, b).item();
    check(wd_grad_loss(Tensor({n}, pa), b).item() == wd);
    check(wd_grad_loss(a, Tensor({n}, pb)).item() == wd);
    check(wd_grad_loss(a, Tensor({n}, pa)).item() == 0.0);
    // cd under positive scaling of either argument
    const double k1 = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
    const double k2 = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
    const double cd = cd_grad_loss(a, b).item();
    check(std::abs(cd_grad_loss(scale(a, k1), b).item() - cd) <= 1e-12);
    check(std::abs(cd_grad_loss(a, scale(b, k2)).item() - cd) <= 1e-12);
    // tv
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 1, 8)};
    std::vector<double> flat(numel(s));
    const std::size_t plane = s[2] * s[3];
    for (std::size_t p = 0; p < s[0] * s[1]; ++p) {
      const double v = random_values(1, rng)[0];
      std::fill(flat.begin() + static_cast<long>(p * plane), flat.begin() + static_cast<long>((p + 1) * plane), v);
    }
    check(tv_loss(Tensor(s, flat)).item() == 0.0);
    if (plane > 1) {
      flat[rng() % flat.size()] += 0.01;
      check(tv_loss(Tensor(s, flat)).item() > 0.0);
    }
  }
  return {failures == 0, std::to_string(checks - failures) + "/" + std::to_string(checks) + " property checks hold"};
}

// ---------------------------------------------------------------------------
// 9. Generator schedule.

Outcome criterion9() {
  std::string detail;
  bool pass = true;
  for (std::size_t r : {8, 16, 32, 64}) {
    GeneratorConfig cfg;
    cfg.resolution = r;
    cfg.width = 4;
    cfg.latent_dim = 16;
    cfg.seed = r;
    const GeneratorState g = build_generator(cfg);
    const std::size_t expected = static_cast<std::size_t>(std::log2(static_cast<double>(r) / 4.0));
    Generation out;
    {
      NoGradGuard no_grad;
      out = generate(g, LatentBatch::sample(2, cfg.latent_dim, r));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < cfg.classes; ++k) s += out.label_probs.at(i * cfg.classes + k);
      worst = std::max(worst, std::abs(s - 1.0));
    }
    const bool ok = g.block_count() == expected && out.images.shape() == Shape{2, 1, r, r} && worst <= 1e-9;
    pass = pass && ok;
    detail += (detail.empty() ? "" : "; ") + std::string("R=") + std::to_string(r) + ": " +
              std::to_string(g.block_count()) + " blocks, " + to_string(out.images.shape()) +
              ", label sum error " + fmt(worst, 2);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 10. FedAvg sanity.

Outcome criterion10() {
  const Dataset data = digits(32);
  FLConfig fl;
  fl.clients = 4;
  fl.batch_size = 8;
  fl.lr = 0.05;
  fl.rounds = 50;
  fl.seed = 10;
  const GlobalModel m0 = build_model("lenet-variant", {1, 32, 32}, 10, 10);
  const Simulation sim = simulate(m0, data, fl, {}, false);
  // Smoothed loss: means of consecutive 10-round blocks over rounds 1..50.
  std::vector<double> blocks;
  for (std::size_t b = 0; b < 5; ++b) {
    blocks.push_back(mean_of(std::vector<double>(sim.global_losses.begin() + static_cast<long>(1 + 10 * b),
                                                 sim.global_losses.begin() + static_cast<long>(11 + 10 * b))));
  }
  bool decreasing = sim.global_losses.size() == 51;
  for (std::size_t i = 1; i < blocks.size(); ++i) decreasing = decreasing && blocks[i] < blocks[i - 1];

  // One client, one round: identical to a centralized gradient step.
  const ClientBatch batch = ClientBatch::from_dataset(data, {3, 17, 42, 99, 150});
  const RoundResult r = fl_round(m0, {batch}, 0.05, 1);
  const GlobalModel central = apply_step(m0, local_gradient(m0, batch), 0.05);
  bool identical = true;
  for (std::size_t i = 0; i < central.params.size(); ++i) identical = identical && r.model.params[i].vec() == central.params[i].vec();

  std::string trace;
  for (double b : blocks) trace += " " + fmt(b);
  return {decreasing && identical, "block means" + trace + "; C=1 round " +
                                       (identical ? "bit-identical" : "differs") + " to centralized step"};
}

// ---------------------------------------------------------------------------
// 11. Re-identification of recovered images.

Outcome criterion11() {
  const Dataset train = digits(16, 1);
  TrainConfig tc;
  tc.seed = 11;
  const GlobalModel classifier =
      train_centralized(build_model("lenet-variant", {1, 16, 16}, 10, 1111), train, tc);
  std::vector<std::size_t> all(train.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> labels(train.labels.begin(), train.labels.end());
  const double train_acc = reidentify(train.images(all), classifier, labels, 1);

  // Victims come from a separately seeded sample of the same task.
  const Dataset victims = digits(16, 2);
  std::vector<double> images;
  std::vector<std::size_t> truth;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const Scenario s = scenario(victims, 1, seed);
    const AttackReport r = grnn_attack(s.gradient, s.model, attack_config(1, 500, seed));
    images.insert(images.end(), r.images.begin(), r.images.end());
    truth.push_back(batch_labels(s.victim)[0]);
  }
  const Tensor recovered({50, 1, 16, 16}, images);
  std::vector<double> topk;
  for (std::size_t k = 1; k <= 10; ++k) topk.push_back(reidentify(recovered, classifier, truth, k));
  bool monotone = true;
  for (std::size_t k = 1; k < topk.size(); ++k) monotone = monotone && topk[k] >= topk[k - 1];
  return {train_acc >= 0.95 && topk[0] >= 0.6 && monotone,
          "classifier training accuracy " + fmt(train_acc) + "; top-1 " + fmt(topk[0]) + ", top-3 " + fmt(topk[2]) +
              ", top-5 " + fmt(topk[4]) + (monotone ? ", non-decreasing in k" : ", NOT monotone in k")};
}

// ---------------------------------------------------------------------------
// 12. Format round trips, config validation, seeded metrics.

Outcome criterion12() {
  std::mt19937_64 rng(12);
  std::vector<std::string> failed;
  const fs::path dir = fs::temp_directory_path() / ("grnn_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);

  // Datasets stored at 8 bits come back exactly as their quantized values.
  for (std::size_t channels : {1, 3}) {
    Dataset d;
    d.channels = channels;
    d.height = channels == 3 ? 32 : 28;
    d.width = d.height;
    d.classes = 10;
    for (int i = 0; i < 5; ++i) d.labels.push_back(rng() % 10);
    d.pixels = random_values(5 * d.image_size(), rng, 0.0, 1.0);
    Dataset back;
    if (channels == 1) {
      write_idx(d, (dir / "img.idx").string(), (dir / "lab.idx").string());
      back = load_idx((dir / "img.idx").string(), (dir / "lab.idx").string(), 10);
    } else {
      write_cifar_bin(d, (dir / "data.bin").string());
      back = load_cifar_bin((dir / "data.bin").string(), 10);
    }
    std::vector<double> q = d.pixels;
    for (auto& v : q) v = quantize(v) / 255.0;
    if (back.pixels != q || back.labels != d.labels) failed.push_back(channels == 1 ? "idx" : "cifar");
    // A second trip is lossless.
    if (channels == 1) {
      write_idx(back, (dir / "img2.idx").string(), (dir / "lab2.idx").string());
      if (load_idx((dir / "img2.idx").string(), (dir / "lab2.idx").string(), 10).pixels != back.pixels) {
        failed.push_back("idx second trip");
      }
    }
  }
  for (std::size_t channels : {1, 3}) {
    const ImageShape s{channels, 7, 9};
    const auto v = random_values(s.size(), rng, 0.0, 1.0);
    const fs::path p = dir / (channels == 1 ? "x.pgm" : "x.ppm");
    write_image(v, s, p.string());
    const DecodedImage back = read_image(p.string());
    std::vector<double> q = v;
    for (auto& x : q) x = quantize(x) / 255.0;
    if (back.values != q || back.shape.channels != channels) failed.push_back(channels == 1 ? "pgm" : "ppm");
  }

  try {
    parse_config_text("[attack]\nlrr = 1\n");
    failed.push_back("unknown key accepted");
  } catch (const ConfigError&) {
  }

  // Two runs with the same seed in separate roots.
  const fs::path cfg = dir / "c.cfg";
  std::ofstream(cfg) << "seed = 12\n[model]\narch = lenet-variant\n[io]\ndataset = synthetic-digits\nsize = 40\n"
                        "resolution = 16\n[attack]\niterations = 20\nbatch = 2\n";
  std::string metrics[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path root = dir / ("runs" + std::to_string(i));
    setenv("GRNN_RUNS_DIR", root.c_str(), 1);
    const std::string c = cfg.string();
    const char* argv[] = {"grnn", "attack", "--config", c.c_str(), "--run-id", "seeded"};
    std::ostringstream out, err;
    if (run_cli(6, argv, out, err) != 0) failed.push_back("cli attack: " + err.str());
    std::ifstream in(root / "seeded" / "metrics.jsonl", std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    metrics[i] = s.str();
  }
  unsetenv("GRNN_RUNS_DIR");
  if (metrics[0].empty() || metrics[0] != metrics[1]) failed.push_back("seeded metrics differ");
  fs::remove_all(dir);

  std::string detail = "IDX, CIFAR, PGM, PPM round trips; unknown-key rejection; seeded metrics (" +
                       std::to_string(metrics[0].size()) + " bytes) identical";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " " + f + ";";
  }
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<Outcome()>> criteria{
      {1, criterion1}, {2, criterion2},  {3, criterion3},   {4, criterion4},
      {5, criterion5}, {6, criterion6},  {7, criterion7},   {8, criterion8},
      {9, criterion9}, {10, criterion10}, {11, criterion11}, {12, criterion12}};
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) {
    for (const auto& c : criteria) selected.push_back(c.first);
  }
  int failures = 0;
  for (int id : selected) {
    auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", id);
      return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d: %s  %s  [%.0fs]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
