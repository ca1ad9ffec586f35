#pragma once

// Image similarity, batch assignment matching and derived accuracies.
//
// Images are stored in [0,1]. PSNR rescales to the 0-255 range; SSIM uses
// L = 1 on the stored range, which is the same statistic as L = 255 on
// rescaled images.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "grnn/models.hpp"

namespace grnn {

inline constexpr double kPsnrCap = 100.0;

// 10*log10(255^2 / MSE) on images rescaled to 0-255; 100 dB when MSE < 1e-10.
inline double psnr(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("psnr: images differ in size or are empty");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) * 255.0;
    s += d * d;
  }
  const double mse = s / static_cast<double>(a.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

inline double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: shape mismatch");
  return psnr(a.vec(), b.vec());
}

inline double mean_squared_error(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("mse: images differ in size or are empty");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

struct ImageShape {
  std::size_t channels = 1, height = 0, width = 0;
  std::size_t size() const { return channels * height * width; }
};

struct SsimOptions {
  std::size_t window = 8;
  double dynamic_range = 1.0;
  double k1 = 0.01, k2 = 0.03;
};

// Mean local SSIM over every window x window patch (stride 1) of every channel,
// with uniform weights and sample (n-1) covariances.
inline double ssim(const std::vector<double>& a, const std::vector<double>& b, const ImageShape& s,
                   const SsimOptions& opt = {}) {
  if (a.size() != b.size() || a.size() != s.size()) throw ShapeError("ssim: images differ in size");
  const std::size_t w = opt.window;
  if (s.height < w || s.width < w) {
    throw ShapeError("ssim: image " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                     " is smaller than the " + std::to_string(w) + "x" + std::to_string(w) + " window");
  }
  const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2);
  const double c2 = std::pow(opt.k2 * opt.dynamic_range, 2);
  const double n = static_cast<double>(w * w);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < s.channels; ++c) {
    const double* pa = a.data() + c * s.height * s.width;
    const double* pb = b.data() + c * s.height * s.width;
    for (std::size_t y = 0; y + w <= s.height; ++y) {
      for (std::size_t x = 0; x + w <= s.width; ++x) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t i = 0; i < w; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const double u = pa[(y + i) * s.width + x + j], v = pb[(y + i) * s.width + x + j];
            sa += u;
            sb += v;
            saa += u * u;
            sbb += v * v;
            sab += u * v;
          }
        }
        const double ma = sa / n, mb = sb / n;
        const double va = (saa - n * ma * ma) / (n - 1);
        const double vb = (sbb - n * mb * mb) / (n - 1);
        const double cov = (sab - n * ma * mb) / (n - 1);
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Assignment

// Minimum-cost perfect matching on a square cost matrix (row-major), O(n^3).
// Returns the column assigned to each row.
inline std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) throw ShapeError("hungarian: cost matrix is not n x n");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is a sentinel.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

inline double assignment_cost(const std::vector<double>& cost, std::size_t n,
                              const std::vector<std::size_t>& perm) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += cost[i * n + perm[i]];
  return total;
}

// Among optimal assignments, the lexicographically smallest one (lowest row
// takes the lowest column that still admits an optimal completion).
// Ties are judged within a relative tolerance of 1e-12.
inline std::vector<std::size_t> optimal_assignment(const std::vector<double>& cost, std::size_t n) {
  std::vector<std::size_t> best = hungarian(cost, n);
  const double optimum = assignment_cost(cost, n, best);
  if (n <= 1 || n > 32) return best;
  const double tol = 1e-12 * std::max(1.0, std::abs(optimum));

  std::vector<std::size_t> result(n);
  std::vector<bool> row_done(n, false), col_used(n, false);
  double fixed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (col_used[j]) continue;
      // Optimal completion of the remaining rows/columns with (i, j) fixed.
      std::vector<std::size_t> rows, cols;
      for (std::size_t r = i + 1; r < n; ++r) rows.push_back(r);
      for (std::size_t c = 0; c < n; ++c) {
        if (!col_used[c] && c != j) cols.push_back(c);
      }
      const std::size_t m = rows.size();
      double rest = 0.0;
      if (m > 0) {
        std::vector<double> sub(m * m);
        for (std::size_t a = 0; a < m; ++a) {
          for (std::size_t b = 0; b < m; ++b) sub[a * m + b] = cost[rows[a] * n + cols[b]];
        }
        rest = assignment_cost(sub, m, hungarian(sub, m));
      }
      if (fixed + cost[i * n + j] + rest <= optimum + tol) {
        result[i] = j;
        col_used[j] = true;
        fixed += cost[i * n + j];
        break;
      }
    }
    row_done[i] = true;
  }
  // Guard against tolerance artifacts: never return something worse than the solver.
  return assignment_cost(cost, n, result) <= optimum + tol ? result : best;
}

enum class MatchMetric { Mse, Psnr, Ssim };

inline std::string metric_name(MatchMetric m) {
  switch (m) {
    case MatchMetric::Mse: return "mse";
    case MatchMetric::Psnr: return "psnr";
    case MatchMetric::Ssim: return "ssim";
  }
  return "?";
}

inline MatchMetric parse_metric(const std::string& s) {
  if (s == "mse") return MatchMetric::Mse;
  if (s == "psnr") return MatchMetric::Psnr;
  if (s == "ssim") return MatchMetric::Ssim;
  throw std::invalid_argument("unknown metric '" + s + "' (expected mse, psnr or ssim)");
}

struct PairScores {
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;

  double get(MatchMetric m) const {
    return m == MatchMetric::Mse ? mse : m == MatchMetric::Psnr ? psnr : ssim;
  }
};

struct MatchResult {
  MatchMetric metric = MatchMetric::Mse;
  std::vector<std::size_t> perm;  // fake index -> true index
  std::vector<PairScores> pairs;  // per fake index, against its matched true image
  double total_cost = 0.0;

  double mean(MatchMetric m) const {
    double s = 0.0;
    for (const auto& p : pairs) s += p.get(m);
    return pairs.empty() ? 0.0 : s / static_cast<double>(pairs.size());
  }
};

inline PairScores score_pair(const std::vector<double>& a, const std::vector<double>& b,
                             const ImageShape& s) {
  PairScores p;
  p.mse = mean_squared_error(a, b);
  p.psnr = psnr(a, b);
  p.ssim = s.height >= 8 && s.width >= 8 ? ssim(a, b, s) : 0.0;
  return p;
}

// Batches are (B, C, H, W) value arrays. Cost per pair is MSE, or the
// negated PSNR / SSIM.
inline MatchResult match_batch(const std::vector<double>& fakes, const std::vector<double>& trues,
                               std::size_t batch, const ImageShape& s,
                               MatchMetric metric = MatchMetric::Mse) {
  if (fakes.size() != batch * s.size() || trues.size() != batch * s.size()) {
    throw ShapeError("match_batch: batch sizes differ");
  }
  auto image = [&](const std::vector<double>& v, std::size_t i) {
    return std::vector<double>(v.begin() + static_cast<long>(i * s.size()),
                               v.begin() + static_cast<long>((i + 1) * s.size()));
  };
  std::vector<double> cost(batch * batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const auto f = image(fakes, i);
    for (std::size_t j = 0; j < batch; ++j) {
      const auto t = image(trues, j);
      switch (metric) {
        case MatchMetric::Mse: cost[i * batch + j] = mean_squared_error(f, t); break;
        case MatchMetric::Psnr: cost[i * batch + j] = -psnr(f, t); break;
        case MatchMetric::Ssim: cost[i * batch + j] = -ssim(f, t, s); break;
      }
    }
  }
  MatchResult r;
  r.metric = metric;
  r.perm = optimal_assignment(cost, batch);
  r.total_cost = assignment_cost(cost, batch, r.perm);
  for (std::size_t i = 0; i < batch; ++i) r.pairs.push_back(score_pair(image(fakes, i), image(trues, r.perm[i]), s));
  return r;
}

inline MatchResult match_batch(const Tensor& fakes, const Tensor& trues,
                               MatchMetric metric = MatchMetric::Mse) {
  if (fakes.rank() != 4 || fakes.shape() != trues.shape()) {
    throw ShapeError("match_batch: expected equal (B, C, H, W) batches, got " +
                     to_string(fakes.shape()) + " and " + to_string(trues.shape()));
  }
  return match_batch(fakes.vec(), trues.vec(), fakes.dim(0),
                     {fakes.dim(1), fakes.dim(2), fakes.dim(3)}, metric);
}

// ---------------------------------------------------------------------------
// Success curves

struct SuccessCurve {
  MatchMetric metric = MatchMetric::Ssim;
  std::size_t batch = 0;
  std::vector<double> thresholds;
  std::vector<double> rates;
};

// A matched pair passes when MSE <= t, or PSNR / SSIM >= t.
inline bool passes(MatchMetric m, double value, double threshold) {
  return m == MatchMetric::Mse ? value <= threshold : value >= threshold;
}

inline SuccessCurve success_rate(const std::vector<MatchResult>& runs, const std::vector<double>& thresholds,
                                 MatchMetric metric) {
  std::size_t pairs = 0;
  for (const auto& r : runs) pairs += r.pairs.size();
  if (pairs == 0) throw std::invalid_argument("success_rate: no matched pairs");
  SuccessCurve c;
  c.metric = metric;
  c.batch = runs.front().pairs.size();
  c.thresholds = thresholds;
  for (double t : thresholds) {
    std::size_t ok = 0;
    for (const auto& r : runs) {
      for (const auto& p : r.pairs) ok += passes(metric, p.get(metric), t);
    }
    c.rates.push_back(static_cast<double>(ok) / static_cast<double>(pairs));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Labels

// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax_row(const double* row, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

inline double label_accuracy(const std::vector<double>& fake_probs, std::size_t classes,
                             const std::vector<std::size_t>& true_labels, const MatchResult& match) {
  const std::size_t b = true_labels.size();
  if (match.perm.size() != b || fake_probs.size() != b * classes) {
    throw ShapeError("label_accuracy: batch mismatch");
  }
  if (b == 0) throw std::invalid_argument("label_accuracy: empty batch");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < b; ++i) {
    ok += argmax_row(fake_probs.data() + i * classes, classes) == true_labels[match.perm[i]];
  }
  return static_cast<double>(ok) / static_cast<double>(b);
}

// Fraction of images whose true label is among the classifier's k highest
// logits (ties broken toward the lower class index).
inline double reidentify(const Tensor& images, const GlobalModel& classifier,
                         const std::vector<std::size_t>& true_labels, std::size_t k) {
  const std::size_t classes = classifier.classes;
  if (k < 1 || k > classes) {
    throw std::invalid_argument("reidentify: k must be in [1, " + std::to_string(classes) + "]");
  }
  if (images.rank() != 4 || images.dim(0) != true_labels.size()) {
    throw ShapeError("reidentify: image batch and label count differ");
  }
  if (true_labels.empty()) throw std::invalid_argument("reidentify: empty batch");
  Tensor logits;
  {
    NoGradGuard no_grad;
    logits = forward(classifier, images);
  }
  std::size_t ok = 0;
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    const double* row = logits.values().data() + i * classes;
    // Rank of the true class: entries strictly above it, plus equal entries at lower indices.
    const std::size_t t = true_labels[i];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      if (row[j] > row[t] || (row[j] == row[t] && j < t)) ++rank;
    }
    ok += rank < k;
  }
  return static_cast<double>(ok) / static_cast<double>(true_labels.size());
}

}  // namespace grnn
