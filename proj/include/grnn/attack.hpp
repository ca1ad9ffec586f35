#pragma once

// Gradient-matching attacks against a frozen global model.
//
// grnn_attack optimizes a two-branch generator so that the gradient the model
// produces on the generated (image, label) batch matches the shared gradient.
// dlg_attack optimizes raw dummy images and label logits directly.
// idlg_label reads the true class off the sign of the final bias gradient.

#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <optional>
#include <random>
#include <string>

#include "grnn/generator.hpp"
#include "grnn/models.hpp"
#include "grnn/optim.hpp"

namespace grnn {

// ---------------------------------------------------------------------------
// Loss terms

inline void require_same_length(const Tensor& g, const Tensor& fake, const char* op) {
  if (g.numel() != fake.numel()) {
    throw ShapeError(std::string(op) + ": gradient lengths differ (" + std::to_string(g.numel()) +
                     " vs " + std::to_string(fake.numel()) + ")");
  }
}

// Mean squared difference over all P entries.
inline Tensor mse_grad_loss(const Tensor& g, const Tensor& fake) {
  require_same_length(g, fake, "mse_grad_loss");
  return mean(square(sub(flatten(fake), flatten(g))));
}

// One-dimensional Wasserstein-1 distance between the entry distributions:
// mean absolute difference of the sorted vectors.
inline Tensor wd_grad_loss(const Tensor& g, const Tensor& fake) {
  require_same_length(g, fake, "wd_grad_loss");
  Tensor sorted_true = sort(g.detach());
  return mean(abs(sub(sort(fake), sorted_true)));
}

class ZeroNormError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// 1 - cos(g, fake).
inline Tensor cd_grad_loss(const Tensor& g, const Tensor& fake) {
  require_same_length(g, fake, "cd_grad_loss");
  double gn = 0.0, fn = 0.0;
  for (double v : g.values()) gn += v * v;
  for (double v : fake.values()) fn += v * v;
  if (gn == 0.0 || fn == 0.0) throw ZeroNormError("cd_grad_loss: zero-norm gradient vector");
  Tensor a = flatten(g), b = flatten(fake);
  Tensor norms = sqrt(mul(dot(a, a), dot(b, b)));
  return add_scalar(neg(div(dot(a, b), norms)), 1.0);
}

// Anisotropic total variation divided by the number of entries N*C*H*W.
inline Tensor tv_loss(const Tensor& images) {
  if (images.rank() != 4) throw ShapeError("tv_loss: expected NCHW images");
  const std::size_t h = images.dim(2), w = images.dim(3);
  Tensor total = Tensor::scalar(0.0);
  if (h > 1) {
    total = add(total, sum(abs(sub(slice(images, 2, 1, h), slice(images, 2, 0, h - 1)))));
  }
  if (w > 1) {
    total = add(total, sum(abs(sub(slice(images, 3, 1, w), slice(images, 3, 0, w - 1)))));
  }
  return scale(total, 1.0 / static_cast<double>(images.numel()));
}

struct LossTerms {
  bool mse = true;
  bool wd = true;
  bool tv = true;
  bool cd = false;

  bool operator==(const LossTerms&) const = default;
};

struct LossBreakdown {
  Tensor total;
  std::optional<double> mse, wd, tv, cd;
};

// Layer-wise variant of the Wasserstein term: average of per-parameter distances.
inline Tensor wd_grad_loss_per_layer(const Tensor& g, const Tensor& fake,
                                     const std::vector<Shape>& shapes) {
  require_same_length(g, fake, "wd_grad_loss");
  Tensor total = Tensor::scalar(0.0);
  std::size_t off = 0;
  for (const auto& s : shapes) {
    const std::size_t n = numel(s);
    total = add(total, wd_grad_loss(slice(g, 0, off, off + n), slice(fake, 0, off, off + n)));
    off += n;
  }
  if (off != g.numel()) throw ShapeError("wd_grad_loss: layer shapes do not cover the vector");
  return scale(total, 1.0 / static_cast<double>(shapes.size()));
}

enum class MseReduction { Sum, Mean };

struct AttackLossOptions {
  LossTerms terms;
  MseReduction mse_reduction = MseReduction::Sum;
  double tv_weight = 1e-3;
  // Empty: whole-vector Wasserstein term. Otherwise per-parameter shapes.
  std::vector<Shape> wd_layers;
};

inline LossBreakdown attack_loss(const Tensor& g, const Tensor& fake, const Tensor& images,
                                 const AttackLossOptions& opt) {
  const auto& t = opt.terms;
  if (!t.mse && !t.wd && !t.cd) {
    throw std::invalid_argument("attack_loss: at least one gradient-distance term must be enabled");
  }
  if (opt.tv_weight < 0.0) throw std::invalid_argument("attack_loss: negative TV weight");
  LossBreakdown out;
  Tensor total = Tensor::scalar(0.0);
  if (t.mse) {
    Tensor v = mse_grad_loss(g, fake);
    if (opt.mse_reduction == MseReduction::Sum) v = scale(v, static_cast<double>(g.numel()));
    out.mse = v.item();
    total = add(total, v);
  }
  if (t.wd) {
    Tensor v = opt.wd_layers.empty() ? wd_grad_loss(g, fake)
                                     : wd_grad_loss_per_layer(g, fake, opt.wd_layers);
    out.wd = v.item();
    total = add(total, v);
  }
  if (t.cd) {
    Tensor v = cd_grad_loss(g, fake);
    out.cd = v.item();
    total = add(total, v);
  }
  if (t.tv) {
    Tensor v = tv_loss(images);
    out.tv = v.item();
    total = add(total, scale(v, opt.tv_weight));
  }
  out.total = total;
  return out;
}

// ---------------------------------------------------------------------------
// Configuration and report

struct AttackConfig {
  std::size_t iterations = 1000;
  std::size_t batch_size = 1;
  double lr = 1e-3;
  double smoothing = 0.99;
  double momentum = 0.5;
  // Negative selects the architecture default (1e-3 lenet-variant, 1e-6 small-resnet).
  double tv_weight = -1.0;
  LossTerms terms;
  MseReduction mse_reduction = MseReduction::Sum;
  bool wd_per_layer = false;
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 50;
  std::size_t latent_dim = 128;
  std::size_t generator_width = 16;
  // Step size for the dummy-data baseline, which optimizes pixels directly.
  double dlg_lr = 0.1;

  double effective_tv_weight(Architecture arch) const {
    if (tv_weight >= 0.0) return tv_weight;
    return arch == Architecture::LeNetVariant ? 1e-3 : 1e-6;
  }
};

struct Snapshot {
  std::size_t iteration = 0;
  std::vector<double> images;
  std::vector<double> label_probs;
};

struct AttackReport {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<double> total_loss;
  std::vector<double> mse_loss, wd_loss, tv_loss, cd_loss;
  Shape image_shape;
  std::vector<double> images;       // final recovered images, values in [0,1]
  std::vector<double> label_probs;  // (B, K)
  std::size_t classes = 0;
  std::vector<Snapshot> snapshots;
  double seconds = 0.0;

  std::size_t iterations() const { return total_loss.size(); }
  std::size_t batch() const { return image_shape.empty() ? 0 : image_shape[0]; }
  std::vector<std::size_t> inferred_labels() const {
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < batch(); ++b) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < classes; ++k) {
        if (label_probs[b * classes + k] > label_probs[b * classes + best]) best = k;
      }
      out.push_back(best);
    }
    return out;
  }
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& method, std::size_t iteration)
      : std::runtime_error(method + ": non-finite loss at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

// ---------------------------------------------------------------------------
// Shared pieces

// Gradient of the model's soft-target cross-entropy on (images, label_probs)
// with respect to every model parameter, kept differentiable, as one vector.
inline Tensor fake_gradient(const GlobalModel& model, const Tensor& images, const Tensor& label_probs) {
  Tensor loss = softmax_cross_entropy(forward(model, images), label_probs);
  return flatten_all(grad(loss, model.params, true));
}

namespace detail {

inline void check_attack_inputs(const GradientVector& g, const GlobalModel& model,
                                const AttackConfig& cfg) {
  if (g.size() != model.parameter_count()) {
    throw ShapeError("attack: gradient length " + std::to_string(g.size()) +
                     " does not match model parameter count " +
                     std::to_string(model.parameter_count()));
  }
  if (cfg.batch_size == 0) throw std::invalid_argument("attack: batch size must be at least 1");
  if (!cfg.terms.mse && !cfg.terms.wd && !cfg.terms.cd) {
    throw std::invalid_argument("attack: at least one gradient-distance term must be enabled");
  }
  if (model.input.height != model.input.width) {
    throw ShapeError("attack: generator emits square images, model input is not square");
  }
}

inline AttackLossOptions loss_options(const GradientVector& g, const GlobalModel& model,
                                      const AttackConfig& cfg) {
  AttackLossOptions opt;
  opt.terms = cfg.terms;
  opt.tv_weight = cfg.effective_tv_weight(model.arch);
  opt.mse_reduction = cfg.mse_reduction;
  if (cfg.wd_per_layer) opt.wd_layers = g.shapes;
  return opt;
}

inline void record(AttackReport& r, const LossBreakdown& l, std::size_t iteration,
                   const std::string& method) {
  const double total = l.total.item();
  if (!std::isfinite(total)) throw NonFiniteLoss(method, iteration);
  r.total_loss.push_back(total);
  if (l.mse) r.mse_loss.push_back(*l.mse);
  if (l.wd) r.wd_loss.push_back(*l.wd);
  if (l.tv) r.tv_loss.push_back(*l.tv);
  if (l.cd) r.cd_loss.push_back(*l.cd);
}

inline std::vector<double> clamp_unit(std::vector<double> v) {
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  return v;
}

}  // namespace detail

inline GeneratorConfig generator_config_for(const GlobalModel& model, const AttackConfig& cfg) {
  GeneratorConfig gc;
  gc.resolution = model.input.height;
  gc.image_channels = model.input.channels;
  gc.classes = model.classes;
  gc.latent_dim = cfg.latent_dim;
  gc.width = cfg.generator_width;
  gc.seed = cfg.seed;
  return gc;
}

// The frozen latent batch of a GRNN run. Its stream is separate from the
// generator's parameter initialization stream.
inline LatentBatch attack_latent(const AttackConfig& cfg) {
  return LatentBatch::sample(cfg.batch_size, cfg.latent_dim, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
}

// ---------------------------------------------------------------------------
// GRNN

// Optional per-iteration observer: (iteration, loss terms).
using IterationObserver = std::function<void(std::size_t, const LossBreakdown&)>;

inline AttackReport grnn_attack(const GradientVector& true_grad, const GlobalModel& model,
                                const AttackConfig& cfg, const IterationObserver& observe = {}) {
  detail::check_attack_inputs(true_grad, model, cfg);
  const auto start = std::chrono::steady_clock::now();

  GeneratorState gen = build_generator(generator_config_for(model, cfg));
  const LatentBatch latent = attack_latent(cfg);
  const Tensor g = true_grad.as_tensor();
  const AttackLossOptions opt = detail::loss_options(true_grad, model, cfg);
  RMSprop optimizer(cfg.lr, cfg.smoothing, 1e-8, cfg.momentum);

  AttackReport report;
  report.method = "grnn";
  report.seed = cfg.seed;
  report.classes = model.classes;

  auto snapshot = [&](std::size_t it, const Generation& out) {
    report.snapshots.push_back({it, out.images.vec(), out.label_probs.vec()});
  };

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<Tensor> params = gen.parameters();
    Generation out = generate(gen, latent);
    if (cfg.snapshot_every && it % cfg.snapshot_every == 0) snapshot(it, out);
    Tensor fake = fake_gradient(model, out.images, out.label_probs);
    LossBreakdown loss = attack_loss(g, fake, out.images, opt);
    detail::record(report, loss, it, report.method);
    if (observe) observe(it, loss);
    std::vector<Tensor> grads = grad(loss.total, params);
    gen = gen.with_parameters(optimizer.step(params, grads));
  }

  Generation final_out;
  {
    NoGradGuard no_grad;
    final_out = generate(gen, latent);
  }
  if (cfg.snapshot_every) snapshot(cfg.iterations, final_out);
  report.image_shape = final_out.images.shape();
  report.images = final_out.images.vec();
  report.label_probs = final_out.label_probs.vec();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// DLG

// Dummy images start standard normal, label logits uniform in [0,1). The
// images enter the model unclamped; they are clamped to [0,1] only when read out.
inline AttackReport dlg_attack(const GradientVector& true_grad, const GlobalModel& model,
                               const AttackConfig& cfg, const IterationObserver& observe = {}) {
  detail::check_attack_inputs(true_grad, model, cfg);
  const auto start = std::chrono::steady_clock::now();
  const auto& in = model.input;
  const Shape image_shape{cfg.batch_size, in.channels, in.height, in.width};
  const Shape label_shape{cfg.batch_size, model.classes};

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> iv(numel(image_shape)), lv(numel(label_shape));
  for (auto& x : iv) x = normal(rng);
  for (auto& x : lv) x = uniform(rng);
  std::vector<Tensor> params{Tensor::parameter(image_shape, std::move(iv)),
                             Tensor::parameter(label_shape, std::move(lv))};

  const Tensor g = true_grad.as_tensor();
  AttackLossOptions opt;
  opt.terms = {true, false, false, false};
  opt.mse_reduction = cfg.mse_reduction;
  RMSprop optimizer(cfg.dlg_lr, cfg.smoothing, 1e-8, cfg.momentum);

  AttackReport report;
  report.method = "dlg";
  report.seed = cfg.seed;
  report.classes = model.classes;
  auto read_out = [&](std::size_t it) {
    NoGradGuard no_grad;
    return Snapshot{it, detail::clamp_unit(params[0].vec()), softmax(params[1]).vec()};
  };

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    if (cfg.snapshot_every && it % cfg.snapshot_every == 0) report.snapshots.push_back(read_out(it));
    Tensor probs = softmax(params[1]);
    Tensor fake = fake_gradient(model, params[0], probs);
    LossBreakdown loss = attack_loss(g, fake, params[0], opt);
    detail::record(report, loss, it, report.method);
    if (observe) observe(it, loss);
    params = optimizer.step(params, grad(loss.total, params));
  }

  Snapshot last = read_out(cfg.iterations);
  if (cfg.snapshot_every) report.snapshots.push_back(last);
  report.image_shape = image_shape;
  report.images = std::move(last.images);
  report.label_probs = std::move(last.label_probs);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// iDLG label rule

struct LabelInference {
  std::size_t label = 0;
  // False when more than one bias-gradient entry is negative.
  bool confident = true;
  std::size_t negative_entries = 0;
};

// For a single sample, the final-layer bias gradient is softmax - onehot: only
// the true class entry is negative, lying in [-1, 0].
inline LabelInference idlg_label(const GradientVector& true_grad, const GlobalModel& model,
                                 std::size_t batch_size = 1) {
  if (batch_size != 1) {
    throw std::invalid_argument("idlg_label: requires a single-sample gradient, batch size is " +
                                std::to_string(batch_size));
  }
  if (true_grad.size() != model.parameter_count() || true_grad.shapes.size() != model.layout.size()) {
    throw ShapeError("idlg_label: gradient does not match the model");
  }
  auto bias = true_grad.param(model.final_bias_index());
  LabelInference out;
  for (std::size_t k = 0; k < bias.size(); ++k) {
    if (bias[k] < bias[out.label]) out.label = k;
    if (bias[k] < 0.0) ++out.negative_entries;
  }
  out.confident = out.negative_entries == 1;
  return out;
}

}  // namespace grnn
