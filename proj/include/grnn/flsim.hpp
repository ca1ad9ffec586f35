#pragma once

// Federated averaging with gradient sharing. Each round every client computes
// the gradient of its mean cross-entropy on one local batch, the server
// averages the shared gradients and takes one step. The shared gradients are
// returned so an honest-but-curious server can attack them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "grnn/dataset.hpp"
#include "grnn/models.hpp"
#include "grnn/optim.hpp"

namespace grnn {

struct FLConfig {
  std::size_t clients = 4;
  std::size_t batch_size = 1;
  double lr = 1.0;
  std::size_t rounds = 50;
  double delta_g = 1e-4;
  std::size_t local_steps = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (clients < 1) throw std::invalid_argument("FLConfig: client count must be at least 1");
    if (batch_size < 1) throw std::invalid_argument("FLConfig: batch size must be at least 1");
    if (!(delta_g > 0.0)) throw std::invalid_argument("FLConfig: delta_g must be positive");
    if (local_steps < 1) throw std::invalid_argument("FLConfig: local steps must be at least 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("FLConfig: learning rate must be non-negative");
  }
};

struct ClientBatch {
  Tensor images;  // (B, C, H, W), values in [0,1]
  Tensor labels;  // (B, K), rows sum to 1

  static ClientBatch from_dataset(const Dataset& d, const std::vector<std::size_t>& index) {
    return {d.images(index), one_hot(d.labels_at(index), d.classes)};
  }

  std::size_t size() const { return images.dim(0); }

  void validate() const {
    if (images.rank() != 4 || labels.rank() != 2 || images.dim(0) != labels.dim(0)) {
      throw ShapeError("ClientBatch: expected (B,C,H,W) images and (B,K) labels");
    }
    for (double v : images.values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("ClientBatch: image value outside [0,1]");
    }
    const std::size_t k = labels.dim(1);
    for (std::size_t i = 0; i < labels.dim(0); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += labels.at(i * k + j);
      if (std::abs(s - 1.0) > 1e-6) throw std::invalid_argument("ClientBatch: label row does not sum to 1");
    }
  }
};

inline double batch_loss(const GlobalModel& model, const ClientBatch& batch) {
  NoGradGuard no_grad;
  return softmax_cross_entropy(forward(model, batch.images), batch.labels).item();
}

// Gradient of the mean cross-entropy over the batch with respect to every parameter.
inline GradientVector local_gradient(const GlobalModel& model, const ClientBatch& batch) {
  batch.validate();
  if (batch.labels.dim(1) != model.classes) {
    throw ShapeError("local_gradient: label width " + std::to_string(batch.labels.dim(1)) +
                     " does not match " + std::to_string(model.classes) + " classes");
  }
  Tensor loss = softmax_cross_entropy(forward(model, batch.images), batch.labels);
  return flatten_gradient(grad(loss, model.params), model);
}

// Elementwise mean. Each entry is summed in sorted order, so the result does
// not depend on the order of the argument list.
inline GradientVector aggregate(const std::vector<GradientVector>& gradients) {
  if (gradients.empty()) throw std::invalid_argument("aggregate: no gradients");
  const std::size_t p = gradients.front().size();
  for (const auto& g : gradients) {
    if (g.size() != p) throw ShapeError("aggregate: gradient lengths differ");
  }
  GradientVector out;
  out.shapes = gradients.front().shapes;
  out.values.resize(p);
  const double c = static_cast<double>(gradients.size());
  std::vector<double> column(gradients.size());
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < gradients.size(); ++i) column[i] = gradients[i].values[j];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double v : column) s += v;
    out.values[j] = s / c;
  }
  return out;
}

// theta - lr * g, as fresh parameter leaves.
inline GlobalModel apply_step(const GlobalModel& model, const GradientVector& g, double lr) {
  if (g.size() != model.parameter_count()) throw ShapeError("apply_step: gradient length mismatch");
  std::vector<std::vector<double>> next;
  std::size_t off = 0;
  for (const auto& p : model.params) {
    std::vector<double> v = p.vec();
    for (auto& x : v) x -= lr * g.values[off++];
    next.push_back(std::move(v));
  }
  return model.with_values(next);
}

// Shared update of one client. With several local steps the client shares
// (theta - theta_local) / lr, which equals its gradient for a single step.
inline GradientVector client_update(const GlobalModel& model, const ClientBatch& batch, double lr,
                                    std::size_t local_steps) {
  GradientVector g = local_gradient(model, batch);
  if (local_steps <= 1 || lr == 0.0) return g;
  GlobalModel local = apply_step(model, g, lr);
  for (std::size_t s = 1; s < local_steps; ++s) local = apply_step(local, local_gradient(local, batch), lr);
  GradientVector delta = g;
  std::size_t off = 0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& a = model.params[i].values();
    const auto& b = local.params[i].values();
    for (std::size_t j = 0; j < a.size(); ++j, ++off) delta.values[off] = (a[j] - b[j]) / lr;
  }
  return delta;
}

struct RoundResult {
  GlobalModel model;                          // after the update
  std::vector<GradientVector> shared;         // per client, as received by the server
  std::vector<double> client_losses;          // before the update
};

inline RoundResult fl_round(const GlobalModel& model, const std::vector<ClientBatch>& clients,
                            double lr = 1.0, std::size_t local_steps = 1) {
  if (clients.empty()) throw std::invalid_argument("fl_round: at least one client is required");
  RoundResult r;
  for (const auto& c : clients) {
    r.shared.push_back(client_update(model, c, lr, local_steps));
    r.client_losses.push_back(batch_loss(model, c));
  }
  r.model = apply_step(model, aggregate(r.shared), lr);
  return r;
}

// True iff the last two losses differ by at most delta_g.
inline bool converged(const std::vector<double>& loss_history, double delta_g) {
  if (loss_history.size() < 2) throw std::invalid_argument("converged: need at least two losses");
  const std::size_t n = loss_history.size();
  return std::abs(loss_history[n - 1] - loss_history[n - 2]) <= delta_g;
}

// ---------------------------------------------------------------------------
// Simulation over a dataset

// Deterministic Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

// Client i owns the examples at positions i, i + C, i + 2C, ... of a seeded shuffle.
inline std::vector<std::vector<std::size_t>> partition(std::size_t n, std::size_t clients, std::uint64_t seed) {
  const auto perm = seeded_permutation(n, seed);
  std::vector<std::vector<std::size_t>> shards(clients);
  for (std::size_t i = 0; i < n; ++i) shards[i % clients].push_back(perm[i]);
  return shards;
}

struct RoundRecord {
  std::size_t round = 0;
  std::vector<double> client_losses;
  double global_loss = 0.0;
  bool converged = false;
};

struct Simulation {
  GlobalModel model;
  std::vector<RoundRecord> records;
  std::vector<double> global_losses;  // entry 0 is the initial model
  // Batches and shared gradients of the last round that ran.
  std::vector<ClientBatch> last_batches;
  std::vector<GradientVector> last_shared;
};

inline double dataset_loss(const GlobalModel& model, const Dataset& d, const std::vector<std::size_t>& index) {
  return batch_loss(model, ClientBatch::from_dataset(d, index));
}

using RoundObserver = std::function<void(const RoundRecord&, const RoundResult&, const std::vector<ClientBatch>&)>;

// Runs up to cfg.rounds rounds; stops early once the global loss (mean
// cross-entropy over the union of client shards) changes by at most delta_g,
// unless `until_converged` is false.
inline Simulation simulate(GlobalModel model, const Dataset& data, const FLConfig& cfg,
                           const RoundObserver& observe = {}, bool until_converged = true) {
  cfg.validate();
  if (data.size() < cfg.clients * cfg.batch_size) {
    throw std::invalid_argument("simulate: dataset has " + std::to_string(data.size()) +
                                " examples, fewer than clients x batch size");
  }
  const auto shards = partition(data.size(), cfg.clients, cfg.seed);
  std::vector<std::size_t> all;
  for (const auto& s : shards) all.insert(all.end(), s.begin(), s.end());

  Simulation sim;
  sim.global_losses.push_back(dataset_loss(model, data, all));
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    std::vector<ClientBatch> batches;
    for (std::size_t c = 0; c < cfg.clients; ++c) {
      const auto order = seeded_permutation(shards[c].size(), cfg.seed * 1000003ULL + t * 131ULL + c);
      std::vector<std::size_t> idx;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) idx.push_back(shards[c][order[b % order.size()]]);
      batches.push_back(ClientBatch::from_dataset(data, idx));
    }
    RoundResult r = fl_round(model, batches, cfg.lr, cfg.local_steps);
    model = r.model;
    sim.global_losses.push_back(dataset_loss(model, data, all));
    RoundRecord rec{t, r.client_losses, sim.global_losses.back(), converged(sim.global_losses, cfg.delta_g)};
    sim.records.push_back(rec);
    if (observe) observe(rec, r, batches);
    sim.last_batches = std::move(batches);
    sim.last_shared = std::move(r.shared);
    if (until_converged && rec.converged) break;
  }
  sim.model = model;
  return sim;
}

// ---------------------------------------------------------------------------
// Centralized training, used for the classifiers that score recovered images

struct TrainConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double smoothing = 0.99;
  double momentum = 0.5;
  std::uint64_t seed = 0;
};

// Mini-batch RMSprop on the mean cross-entropy; each step draws a fresh
// seeded batch without replacement.
inline GlobalModel train_centralized(GlobalModel model, const Dataset& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("train_centralized: empty dataset");
  if (data.classes != model.classes) throw ShapeError("train_centralized: dataset and model class counts differ");
  RMSprop opt(cfg.lr, cfg.smoothing, 1e-8, cfg.momentum);
  const std::size_t b = std::min(cfg.batch_size, data.size());
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const auto perm = seeded_permutation(data.size(), cfg.seed * 2654435761ULL + s);
    const ClientBatch batch = ClientBatch::from_dataset(data, {perm.begin(), perm.begin() + static_cast<long>(b)});
    const Tensor loss = softmax_cross_entropy(forward(model, batch.images), batch.labels);
    model.params = opt.step(model.params, grad(loss, model.params));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Stored gradients, little-endian:
//   "GRNNGRD1" | parameter count (u32) | per parameter: rank (u32), extents (u32)
//   | values as f64.

inline void save_gradient(const GradientVector& g, const std::string& path) {
  ByteWriter w;
  w.raw("GRNNGRD1");
  w.u32_le(static_cast<std::uint32_t>(g.shapes.size()));
  for (const auto& s : g.shapes) {
    w.u32_le(static_cast<std::uint32_t>(s.size()));
    for (auto e : s) w.u32_le(static_cast<std::uint32_t>(e));
  }
  for (double v : g.values) w.f64_le(v);
  write_file_bytes(path, w.bytes());
}

inline GradientVector load_gradient(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (r.raw(8, "gradient magic") != "GRNNGRD1") throw FormatError("not a gradient file", 0);
  GradientVector g;
  const std::uint32_t n = r.u32_le("parameter count");
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    Shape s(r.u32_le("rank"));
    for (auto& e : s) e = r.u32_le("extent");
    total += numel(s);
    g.shapes.push_back(std::move(s));
  }
  r.need(total * 8, "gradient values");
  for (std::size_t i = 0; i < total; ++i) g.values.push_back(r.f64_le("gradient value"));
  if (r.remaining() != 0) throw FormatError("trailing bytes after gradient values", r.offset());
  return g;
}

// Stored client batches, little-endian:
//   "GRNNBAT1" | B, C, H, W, K (u32) | pixels as f64 | B labels (u32)

inline void save_batch(const ClientBatch& b, const std::string& path) {
  b.validate();
  ByteWriter w;
  w.raw("GRNNBAT1");
  for (std::size_t d = 0; d < 4; ++d) w.u32_le(static_cast<std::uint32_t>(b.images.dim(d)));
  const std::size_t k = b.labels.dim(1);
  w.u32_le(static_cast<std::uint32_t>(k));
  for (double v : b.images.values()) w.f64_le(v);
  const auto lv = b.labels.vec();
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto row = lv.begin() + static_cast<long>(i * k);
    w.u32_le(static_cast<std::uint32_t>(std::max_element(row, row + static_cast<long>(k)) - row));
  }
  write_file_bytes(path, w.bytes());
}

inline ClientBatch load_batch(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (r.raw(8, "batch magic") != "GRNNBAT1") throw FormatError("not a batch file", 0);
  Shape s(4);
  for (auto& e : s) e = r.u32_le("batch extent");
  const std::size_t k = r.u32_le("class count");
  r.need(numel(s) * 8 + s[0] * 4, "batch payload");
  std::vector<double> pixels(numel(s));
  for (auto& v : pixels) v = r.f64_le("pixel");
  std::vector<std::size_t> labels(s[0]);
  for (auto& l : labels) {
    l = r.u32_le("label");
    if (l >= k) throw FormatError("label out of range", r.offset() - 4);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after batch", r.offset());
  return {Tensor(s, std::move(pixels)), one_hot(labels, k)};
}

}  // namespace grnn
