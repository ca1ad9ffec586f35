#pragma once

// Client-side gradient perturbation: zero-location Gaussian or Laplacian
// noise added to every entry of the shared gradient.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "grnn/attack.hpp"
#include "grnn/flsim.hpp"
#include "grnn/metrics.hpp"

namespace grnn {

enum class NoiseFamily { None, Gaussian, Laplacian };

inline std::string noise_name(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::None: return "none";
    case NoiseFamily::Gaussian: return "gaussian";
    case NoiseFamily::Laplacian: return "laplacian";
  }
  return "?";
}

inline NoiseFamily parse_noise(const std::string& s) {
  if (s == "none") return NoiseFamily::None;
  if (s == "gaussian") return NoiseFamily::Gaussian;
  if (s == "laplacian" || s == "laplace") return NoiseFamily::Laplacian;
  throw std::invalid_argument("unknown noise family '" + s + "' (expected none, gaussian or laplacian)");
}

// Laplacian scale for a privacy level epsilon: lambda = sensitivity / epsilon.
inline double laplace_scale(double epsilon, double sensitivity = 1.0) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("laplace_scale: epsilon must be positive");
  return sensitivity / epsilon;
}

struct DefenseConfig {
  NoiseFamily family = NoiseFamily::None;
  // Gaussian standard deviation, or Laplacian lambda.
  double scale = 0.0;
  std::uint64_t seed = 0;
};

inline GradientVector add_noise(const GradientVector& g, const DefenseConfig& cfg) {
  if (!(cfg.scale >= 0.0)) throw std::invalid_argument("add_noise: scale must be non-negative");
  if (cfg.family == NoiseFamily::None || cfg.scale == 0.0) return g;
  GradientVector out = g;
  std::mt19937_64 rng(cfg.seed);
  if (cfg.family == NoiseFamily::Gaussian) {
    std::normal_distribution<double> normal(0.0, cfg.scale);
    for (auto& v : out.values) v += normal(rng);
  } else {
    // Inverse CDF on u uniform in (-1/2, 1/2).
    std::uniform_real_distribution<double> uniform(-0.5, 0.5);
    for (auto& v : out.values) {
      const double u = uniform(rng);
      const double mag = -cfg.scale * std::log1p(-2.0 * std::abs(u));
      v += u < 0.0 ? -mag : mag;
    }
  }
  return out;
}

struct SweepCell {
  NoiseFamily family = NoiseFamily::None;
  double scale = 0.0;
  std::size_t batch = 0;
  double psnr = 0.0;  // mean over matched pairs
  double ssim = 0.0;
  double label_accuracy = 0.0;
};

inline std::vector<std::size_t> batch_labels(const ClientBatch& batch) {
  std::vector<std::size_t> labels;
  const std::size_t k = batch.labels.dim(1);
  for (std::size_t i = 0; i < batch.size(); ++i) labels.push_back(argmax_row(batch.labels.values().data() + i * k, k));
  return labels;
}

struct CellResult {
  SweepCell cell;
  AttackReport report;
  MatchResult match;
};

// One sweep cell: noise the clean gradient, attack it, score against the batch.
inline CellResult sweep_cell(const GlobalModel& model, const ClientBatch& batch, const GradientVector& clean,
                             NoiseFamily family, double scale, const AttackConfig& attack,
                             std::uint64_t noise_seed) {
  AttackConfig cfg = attack;
  cfg.batch_size = batch.size();
  CellResult r;
  r.report = grnn_attack(add_noise(clean, {family, scale, noise_seed}), model, cfg);
  r.match = match_batch(Tensor(r.report.image_shape, r.report.images), batch.images);
  r.cell = {family,
            scale,
            batch.size(),
            r.match.mean(MatchMetric::Psnr),
            r.match.mean(MatchMetric::Ssim),
            label_accuracy(r.report.label_probs, r.report.classes, batch_labels(batch), r.match)};
  return r;
}

// Runs the attack once per (family, scale) cell on the noised gradient of
// `batch` and scores the result against the true batch.
inline std::vector<SweepCell> defense_sweep(const GlobalModel& model, const ClientBatch& batch,
                                            const std::vector<double>& scales,
                                            const std::vector<NoiseFamily>& families,
                                            const AttackConfig& attack, std::uint64_t noise_seed = 0) {
  if (scales.empty() || families.empty()) throw std::invalid_argument("defense_sweep: empty grid");
  const GradientVector clean = local_gradient(model, batch);
  std::vector<SweepCell> cells;
  for (NoiseFamily f : families) {
    for (double s : scales) cells.push_back(sweep_cell(model, batch, clean, f, s, attack, noise_seed).cell);
  }
  return cells;
}

}  // namespace grnn
