#pragma once

// Command-line driver. `run_cli` parses argv, dispatches one verb and returns
// the process exit status: 0 success, 1 runtime failure, 2 usage or
// configuration error.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "grnn/attack.hpp"
#include "grnn/config.hpp"
#include "grnn/defense.hpp"
#include "grnn/flsim.hpp"
#include "grnn/image_io.hpp"
#include "grnn/metrics.hpp"
#include "grnn/run_store.hpp"

namespace grnn {

struct CliOptions {
  std::string verb;
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string run_id;
  bool force = false;
  std::size_t jobs = 1;
  std::vector<std::string> runs;  // evaluate / report
  std::string grid;               // ablate
  std::string format = "md";      // report / evaluate
};

// Runtime failure with exit status 1.
class RunFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace cli {

inline ConfigValues effective_config(const CliOptions& o) {
  ConfigValues c = o.config_path.empty() ? ConfigValues{} : load_config(o.config_path);
  for (const auto& ov : o.overrides) c.apply_override(ov);
  if (o.seed) c.set("seed", std::to_string(*o.seed));
  validate_config(c);
  return c;
}

inline std::uint64_t master_seed(const ConfigValues& c) { return static_cast<std::uint64_t>(c.integer("seed")); }

inline Dataset load_dataset(const ConfigValues& c) {
  const std::string& kind = c.text("io.dataset");
  const std::size_t k = c.count("model.classes");
  const std::size_t n = c.count("io.size");
  Dataset d;
  if (kind == "synthetic-digits" || kind == "synthetic-patches") {
    if (n == 0) throw ConfigError("io.size must be positive for synthetic data");
    d = synthetic_dataset(kind == "synthetic-digits" ? "digits" : "patches", n, k, c.count("io.resolution"),
                          master_seed(c) * 0x9E3779B1ULL + 17);
  } else if (kind == "idx") {
    d = load_idx(c.text("io.images"), c.text("io.labels"), k);
  } else {
    d = load_cifar_bin(c.text("io.images"), k);
  }
  if (n > 0 && d.size() > n) {
    d.pixels.resize(n * d.image_size());
    d.labels.resize(n);
  }
  if (d.size() == 0) throw RunFailure("dataset " + kind + " is empty");
  return d;
}

inline GlobalModel initial_model(const ConfigValues& c, const Dataset& d) {
  return build_model(c.text("model.arch"), {d.channels, d.height, d.width}, c.count("model.classes"),
                     master_seed(c), model_init_from(c.text("model.init")));
}

// What an attack runs against: a model, the shared gradient and the batch that produced it.
struct Target {
  GlobalModel model;
  ClientBatch batch;
  GradientVector gradient;
};

// Runs model.fl_rounds rounds, then draws the attacked batch from the data
// and computes its gradient under the resulting model.
inline Target inline_target(const ConfigValues& c, const Dataset& d) {
  Target t;
  t.model = initial_model(c, d);
  FLConfig fl = fl_config_from(c);
  fl.rounds = c.count("model.fl_rounds");
  if (fl.rounds > 0) t.model = simulate(t.model, d, fl, {}, false).model;
  const std::size_t b = c.count("attack.batch");
  const bool average = c.text("attack.target") == "average";
  const std::size_t groups = average ? fl.clients : 1;
  if (b * groups > d.size()) throw ConfigError("attack batch exceeds the dataset size");
  const auto perm = seeded_permutation(d.size(), master_seed(c) ^ 0xA77AC4ULL);
  std::vector<GradientVector> grads;
  std::vector<Tensor> images, labels;
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<std::size_t> idx(perm.begin() + static_cast<long>(g * b), perm.begin() + static_cast<long>((g + 1) * b));
    ClientBatch cb = ClientBatch::from_dataset(d, idx);
    grads.push_back(local_gradient(t.model, cb));
    images.push_back(cb.images);
    labels.push_back(cb.labels);
  }
  t.gradient = average ? aggregate(grads) : grads.front();
  t.batch = {concat(images, 0), concat(labels, 0)};
  return t;
}

// Loads the model, stored gradient and batch of a train-fl run.
inline Target replay_target(const ConfigValues& c) {
  const RunDir src = RunDir::open(runs_root(), c.text("attack.run"));
  const std::size_t client = c.count("attack.client");
  Target t;
  t.model = load_model(src.checkpoint_path("model_before_last.bin").string());
  if (c.text("attack.target") == "average") {
    std::vector<GradientVector> grads;
    std::vector<Tensor> images, labels;
    for (std::size_t i = 0;; ++i) {
      const auto gp = src.checkpoint_path("grad_client" + std::to_string(i) + ".grd");
      if (!fs::exists(gp)) break;
      grads.push_back(load_gradient(gp.string()));
      ClientBatch b = load_batch(src.checkpoint_path("batch_client" + std::to_string(i) + ".bin").string());
      images.push_back(b.images);
      labels.push_back(b.labels);
    }
    if (grads.empty()) throw RunFailure("run " + src.id() + " has no stored gradients");
    t.gradient = aggregate(grads);
    t.batch = {concat(images, 0), concat(labels, 0)};
  } else {
    const auto gp = src.checkpoint_path("grad_client" + std::to_string(client) + ".grd");
    if (!fs::exists(gp)) throw RunFailure("run " + src.id() + " has no stored gradient for client " + std::to_string(client));
    t.gradient = load_gradient(gp.string());
    t.batch = load_batch(src.checkpoint_path("batch_client" + std::to_string(client) + ".bin").string());
  }
  if (t.gradient.size() != t.model.parameter_count()) throw RunFailure("stored gradient does not match the stored model");
  return t;
}

inline Target attack_target(const ConfigValues& c) {
  return c.text("attack.run").empty() ? inline_target(c, load_dataset(c)) : replay_target(c);
}

inline std::string run_id_for(const CliOptions& o, const ConfigValues* c) {
  if (!o.run_id.empty()) return o.run_id;
  return o.verb + "-seed" + (c ? std::to_string(master_seed(*c)) : std::string("0"));
}

inline void save_images(const RunDir& run, const std::string& prefix, const std::vector<double>& values,
                        const Shape& shape) {
  const ImageShape s{shape[1], shape[2], shape[3]};
  const ImageFormat f = format_for_channels(s.channels);
  for (std::size_t i = 0; i < shape[0]; ++i) {
    std::vector<double> img(values.begin() + static_cast<long>(i * s.size()),
                            values.begin() + static_cast<long>((i + 1) * s.size()));
    char name[64];
    std::snprintf(name, sizeof name, "%s_%03zu%s", prefix.c_str(), i, image_extension(f));
    write_image(img, s, run.image_path(name).string(), f);
  }
}

struct AttackOutcome {
  AttackReport report;
  MatchResult match;
  double label_accuracy = 0.0;
};

inline AttackOutcome attack_once(const Target& t, const ConfigValues& c, const GradientVector& shared,
                                 const IterationObserver& observe = {}) {
  AttackConfig a = attack_config_from(c);
  a.batch_size = t.batch.size();
  AttackOutcome o;
  o.report = c.text("attack.method") == "dlg" ? dlg_attack(shared, t.model, a, observe)
                                               : grnn_attack(shared, t.model, a, observe);
  o.match = match_batch(Tensor(o.report.image_shape, o.report.images), t.batch.images);
  o.label_accuracy = label_accuracy(o.report.label_probs, o.report.classes, batch_labels(t.batch), o.match);
  return o;
}

inline MetricRecord result_record(const std::string& run, const std::string& phase, std::size_t index,
                                  const AttackOutcome& o) {
  return {run,
          phase,
          index,
          {{"batch", static_cast<double>(o.match.pairs.size())},
           {"psnr", o.match.mean(MatchMetric::Psnr)},
           {"ssim", o.match.mean(MatchMetric::Ssim)},
           {"mse", o.match.mean(MatchMetric::Mse)},
           {"label_accuracy", o.label_accuracy},
           {"final_loss", o.report.total_loss.empty() ? 0.0 : o.report.total_loss.back()}}};
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(m);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// Markdown or CSV table.
inline void print_table(std::ostream& out, const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows, const std::string& format) {
  if (format == "csv") {
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
      out << "\n";
    }
    return;
  }
  out << "|";
  for (const auto& h : header) out << " " << h << " |";
  out << "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) out << "---|";
  out << "\n";
  for (const auto& r : rows) {
    out << "|";
    for (const auto& v : r) out << " " << v << " |";
    out << "\n";
  }
}

inline void write_config_snapshot(const RunDir& run, const ConfigValues& c) {
  std::ofstream out(run.config_path());
  out << c.to_text();
  if (!out) throw IoError("cannot write " + run.config_path().string());
}

// ---------------------------------------------------------------------------
// Verbs

inline int train_fl(const CliOptions& o, std::ostream& out) {
  const ConfigValues c = effective_config(o);
  const Dataset d = load_dataset(c);
  const RunDir run = RunDir::create(runs_root(), run_id_for(o, &c), o.force);
  write_config_snapshot(run, c);
  MetricsWriter metrics(run.metrics_path().string());
  const FLConfig fl = fl_config_from(c);
  const std::string save = c.text("fl.save_gradients");
  GlobalModel before = initial_model(c, d);

  auto observe = [&](const RoundRecord& r, const RoundResult& res, const std::vector<ClientBatch>& batches) {
    MetricRecord m{run.id(), "fl", r.round, {{"global_loss", r.global_loss}, {"converged", r.converged ? 1.0 : 0.0}}};
    for (std::size_t i = 0; i < r.client_losses.size(); ++i) {
      m.fields.emplace_back("client_loss_" + std::to_string(i), r.client_losses[i]);
    }
    metrics.write(m);
    if (save == "all") {
      for (std::size_t i = 0; i < res.shared.size(); ++i) {
        save_gradient(res.shared[i], run.checkpoint_path("grad_round" + std::to_string(r.round) + "_client" +
                                                         std::to_string(i) + ".grd").string());
        save_batch(batches[i], run.checkpoint_path("batch_round" + std::to_string(r.round) + "_client" +
                                                   std::to_string(i) + ".bin").string());
      }
    }
  };
  // Keep the model each round started from, so the last round's gradients can be replayed.
  GlobalModel current = before;
  auto track = [&](const RoundRecord& r, const RoundResult& res, const std::vector<ClientBatch>& b) {
    observe(r, res, b);
    before = current;
    current = res.model;
  };
  const Simulation sim = simulate(before, d, fl, track, c.flag("fl.until_converged"));
  save_model(sim.model, run.checkpoint_path("model.bin").string());
  save_model(before, run.checkpoint_path("model_before_last.bin").string());
  if (save != "none") {
    for (std::size_t i = 0; i < sim.last_shared.size(); ++i) {
      save_gradient(sim.last_shared[i], run.checkpoint_path("grad_client" + std::to_string(i) + ".grd").string());
      save_batch(sim.last_batches[i], run.checkpoint_path("batch_client" + std::to_string(i) + ".bin").string());
    }
  }
  run.write_manifest(master_seed(c), "train-fl", c.to_text());
  out << "run " << run.id() << ": " << sim.records.size() << " rounds, global loss "
      << fmt(sim.global_losses.front()) << " -> " << fmt(sim.global_losses.back())
      << (sim.records.empty() || !sim.records.back().converged ? "" : " (converged)") << "\n";
  return 0;
}

inline int attack(const CliOptions& o, std::ostream& out) {
  const ConfigValues c = effective_config(o);
  const Target t = attack_target(c);
  const RunDir run = RunDir::create(runs_root(), run_id_for(o, &c), o.force);
  write_config_snapshot(run, c);
  MetricsWriter metrics(run.metrics_path().string());
  const GradientVector shared = add_noise(t.gradient, defense_config_from(c));

  auto observe = [&](std::size_t it, const LossBreakdown& l) {
    MetricRecord m{run.id(), "attack", it, {{"total", l.total.item()}}};
    if (l.mse) m.fields.emplace_back("mse", *l.mse);
    if (l.wd) m.fields.emplace_back("wd", *l.wd);
    if (l.tv) m.fields.emplace_back("tv", *l.tv);
    if (l.cd) m.fields.emplace_back("cd", *l.cd);
    metrics.write(m);
  };
  AttackOutcome res;
  try {
    res = attack_once(t, c, shared, observe);
  } catch (const NonFiniteLoss& e) {
    run.write_manifest(master_seed(c), "attack", c.to_text());
    throw RunFailure(e.what());
  }
  const ImageShape s{t.batch.images.dim(1), t.batch.images.dim(2), t.batch.images.dim(3)};
  for (const auto& snap : res.report.snapshots) {
    const MatchResult m = match_batch(snap.images, t.batch.images.vec(), t.batch.size(), s);
    metrics.write({run.id(), "snapshot", snap.iteration,
                   {{"psnr", m.mean(MatchMetric::Psnr)}, {"ssim", m.mean(MatchMetric::Ssim)}}});
    if (c.flag("io.save_snapshots") && c.flag("io.save_images")) {
      save_images(run, "snap" + std::to_string(snap.iteration), snap.images, t.batch.images.shape());
    }
  }
  MetricRecord r = result_record(run.id(), "result", res.report.iterations(), res);
  if (t.batch.size() == 1) {
    const auto inferred = idlg_label(shared, t.model, 1);
    r.fields.emplace_back("idlg_label_correct", inferred.label == batch_labels(t.batch)[0] ? 1.0 : 0.0);
  }
  metrics.write(r);
  if (c.flag("io.save_images")) {
    save_images(run, "fake", res.report.images, res.report.image_shape);
    save_images(run, "true", t.batch.images.vec(), t.batch.images.shape());
  }
  run.write_manifest(master_seed(c), "attack", c.to_text());
  out << "run " << run.id() << ": " << res.report.method << " " << res.report.iterations()
      << " iterations, matched PSNR " << fmt(res.match.mean(MatchMetric::Psnr)) << " dB, SSIM "
      << fmt(res.match.mean(MatchMetric::Ssim)) << ", label accuracy " << fmt(res.label_accuracy) << "\n";
  return 0;
}

inline std::vector<double> read_run_images(const RunDir& run, const std::string& prefix, Shape& shape) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(run.dir() / "images")) {
    const std::string name = e.path().filename().string();
    if (name.rfind(prefix + "_", 0) == 0) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<double> values;
  for (const auto& f : files) {
    const DecodedImage img = read_image(f.string());
    shape = {files.size(), img.shape.channels, img.shape.height, img.shape.width};
    values.insert(values.end(), img.values.begin(), img.values.end());
  }
  return values;
}

// Scores the exported images of attack runs and prints per-run rows plus an SSIM success curve.
inline int evaluate(const CliOptions& o, std::ostream& out) {
  if (o.runs.empty()) throw ConfigError("evaluate needs at least one --run");
  std::vector<MatchResult> matches;
  std::vector<std::vector<std::string>> rows;
  for (const auto& id : o.runs) {
    const RunDir run = RunDir::open(runs_root(), id);
    Shape fs_shape, ts_shape;
    const auto fakes = read_run_images(run, "fake", fs_shape);
    const auto trues = read_run_images(run, "true", ts_shape);
    if (fakes.empty() || fs_shape != ts_shape) throw RunFailure("run " + id + " has no matching fake/true images");
    const MatchResult m = match_batch(fakes, trues, fs_shape[0], {fs_shape[1], fs_shape[2], fs_shape[3]});
    rows.push_back({id, std::to_string(fs_shape[0]), fmt(m.mean(MatchMetric::Psnr)), fmt(m.mean(MatchMetric::Ssim)),
                    fmt(m.mean(MatchMetric::Mse))});
    matches.push_back(m);
  }
  print_table(out, {"run", "batch", "psnr", "ssim", "mse"}, rows, o.format);
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  const SuccessCurve curve = success_rate(matches, grid, MatchMetric::Ssim);
  std::vector<std::vector<std::string>> crow;
  for (std::size_t i = 0; i < grid.size(); ++i) crow.push_back({fmt(grid[i]), fmt(curve.rates[i])});
  out << "\n";
  print_table(out, {"ssim_threshold", "success_rate"}, crow, o.format);
  return 0;
}

inline int defense_sweep_verb(const CliOptions& o, std::ostream& out) {
  const ConfigValues c = effective_config(o);
  const Target t = attack_target(c);
  const RunDir run = RunDir::create(runs_root(), run_id_for(o, &c), o.force);
  write_config_snapshot(run, c);
  const AttackConfig a = attack_config_from(c);
  const auto scales = c.reals("defense.scales");
  std::vector<NoiseFamily> families;
  for (const auto& f : c.texts("defense.families")) families.push_back(parse_noise(f));
  const std::uint64_t noise_seed = defense_config_from(c).seed;

  std::vector<std::pair<NoiseFamily, double>> grid;
  for (NoiseFamily f : families)
    for (double s : scales) grid.emplace_back(f, s);
  std::vector<CellResult> results(grid.size());
  parallel_for(grid.size(), o.jobs, [&](std::size_t i) {
    results[i] = sweep_cell(t.model, t.batch, t.gradient, grid[i].first, grid[i].second, a, noise_seed);
  });

  MetricsWriter metrics(run.metrics_path().string());
  std::vector<std::vector<std::string>> rows;
  std::ofstream csv(run.dir() / "defense.csv");
  csv << "family,scale,batch,psnr,ssim,label_accuracy\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const SweepCell& cell = results[i].cell;
    metrics.write({run.id(), "defense/" + noise_name(cell.family), i,
                   {{"scale", cell.scale}, {"batch", static_cast<double>(cell.batch)}, {"psnr", cell.psnr},
                    {"ssim", cell.ssim}, {"label_accuracy", cell.label_accuracy}}});
    // An attack counts as failed below 20 dB.
    const std::string shown = cell.psnr < 20.0 ? "FAIL" : fmt(cell.psnr);
    csv << noise_name(cell.family) << "," << cell.scale << "," << cell.batch << "," << shown << "," << fmt(cell.ssim)
        << "," << fmt(cell.label_accuracy) << "\n";
    rows.push_back({noise_name(cell.family), fmt(cell.scale), std::to_string(cell.batch), shown, fmt(cell.ssim),
                    fmt(cell.label_accuracy)});
    if (c.flag("io.save_images")) {
      save_images(run, "cell" + std::to_string(i) + "_fake", results[i].report.images, results[i].report.image_shape);
    }
  }
  csv.close();
  if (c.flag("io.save_images")) save_images(run, "true", t.batch.images.vec(), t.batch.images.shape());
  run.write_manifest(master_seed(c), "defense-sweep", c.to_text());
  print_table(out, {"family", "scale", "batch", "psnr", "ssim", "label_accuracy"}, rows, o.format);
  return 0;
}

// --grid KEY=v1,v2,... where KEY is batch, resolution, terms or any config key.
// Loss-term sets separate terms with '+', e.g. terms=mse+wd,mse+wd+tv.
inline int ablate(const CliOptions& o, std::ostream& out) {
  const auto eq = o.grid.find('=');
  if (eq == std::string::npos) throw ConfigError("--grid must be KEY=v1,v2,...");
  std::string key = detail::trim(o.grid.substr(0, eq));
  static const std::map<std::string, std::string> aliases{
      {"batch", "attack.batch"}, {"resolution", "io.resolution"}, {"terms", "attack.terms"}};
  if (aliases.count(key)) key = aliases.at(key);
  schema_key(key);
  const auto values = detail::split(o.grid.substr(eq + 1), ',');
  if (values.empty() || values.front().empty()) throw ConfigError("--grid has no values");

  const ConfigValues base = effective_config(o);
  std::vector<ConfigValues> cells;
  for (const auto& v : values) {
    ConfigValues c = base;
    std::string val = v;
    if (key == "attack.terms") std::replace(val.begin(), val.end(), '+', ',');
    c.set(key, val);
    validate_config(c);
    cells.push_back(c);
  }
  const RunDir run = RunDir::create(runs_root(), run_id_for(o, &base), o.force);
  write_config_snapshot(run, base);
  std::vector<AttackOutcome> results(cells.size());
  parallel_for(cells.size(), o.jobs, [&](std::size_t i) {
    const Target t = attack_target(cells[i]);
    results[i] = attack_once(t, cells[i], add_noise(t.gradient, defense_config_from(cells[i])));
  });

  MetricsWriter metrics(run.metrics_path().string());
  std::vector<std::vector<std::string>> rows;
  std::ofstream csv(run.dir() / "ablate.csv");
  csv << key << ",psnr,ssim,label_accuracy,success\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    MetricRecord r = result_record(run.id(), "ablate", i, results[i]);
    metrics.write(r);
    // Success proxy: mean matched SSIM of at least 0.6.
    const double ssim = results[i].match.mean(MatchMetric::Ssim);
    const bool ok = ssim >= 0.6;
    csv << values[i] << "," << fmt(results[i].match.mean(MatchMetric::Psnr)) << "," << fmt(ssim) << ","
        << fmt(results[i].label_accuracy) << "," << (ok ? "yes" : "no") << "\n";
    rows.push_back({values[i], fmt(results[i].match.mean(MatchMetric::Psnr)), fmt(ssim),
                    fmt(results[i].label_accuracy), ok ? "✓" : "×"});
    if (base.flag("io.save_images")) {
      save_images(run, "cell" + std::to_string(i) + "_fake", results[i].report.images, results[i].report.image_shape);
    }
  }
  csv.close();
  run.write_manifest(master_seed(base), "ablate " + o.grid, base.to_text());
  print_table(out, {key, "psnr", "ssim", "label_accuracy", "success"}, rows, o.format);
  return 0;
}

inline int report(const CliOptions& o, std::ostream& out) {
  if (o.runs.size() != 1) throw ConfigError("report needs exactly one --run");
  const RunDir run = RunDir::open(runs_root(), o.runs.front());
  std::vector<MetricRecord> records;
  if (fs::exists(run.metrics_path())) records = read_metrics(run.metrics_path().string());
  if (records.empty()) throw RunFailure("no metrics found in run " + run.id());

  // Group by phase in order of first appearance; long traces are thinned to every 50th record.
  std::vector<std::string> phases;
  for (const auto& r : records) {
    if (std::find(phases.begin(), phases.end(), r.phase) == phases.end()) phases.push_back(r.phase);
  }
  for (const auto& phase : phases) {
    std::vector<const MetricRecord*> rs;
    for (const auto& r : records) {
      if (r.phase == phase) rs.push_back(&r);
    }
    const std::size_t stride = rs.size() > 100 ? 50 : 1;
    std::vector<std::string> header{"iteration"};
    for (const auto& f : rs.front()->fields) header.push_back(f.first);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (i % stride != 0 && i + 1 != rs.size()) continue;
      std::vector<std::string> row{std::to_string(rs[i]->iteration)};
      for (const auto& f : rs[i]->fields) row.push_back(fmt(f.second));
      rows.push_back(row);
    }
    if (o.format == "md") out << "### " << phase << "\n\n";
    print_table(out, header, rows, o.format);
    out << "\n";
  }
  return 0;
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CliOptions o;
  CLI::App app{"Generative gradient-inversion attacks on simulated federated learning"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", o.config_path, "configuration file");
    if (needs_config) opt->check(CLI::ExistingFile);
    sub->add_option("--override", o.overrides, "KEY=VALUE, repeatable")->take_all();
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--run-id", o.run_id, "run directory name");
    sub->add_flag("--force", o.force, "overwrite an existing run directory");
    sub->add_option("--jobs", o.jobs, "parallel cells for sweep verbs")->check(CLI::PositiveNumber);
    sub->add_option("--format", o.format, "table format")->check(CLI::IsMember({"md", "csv"}));
  };
  common(app.add_subcommand("train-fl", "run federated averaging and store gradients"), true);
  common(app.add_subcommand("attack", "run GRNN or DLG against one shared gradient"), true);
  common(app.add_subcommand("defense-sweep", "attack noised gradients over a grid of scales"), true);
  auto* ab = app.add_subcommand("ablate", "attack over a grid of one configuration key");
  common(ab, true);
  ab->add_option("--grid", o.grid, "KEY=v1,v2,... (batch, resolution, terms or a config key)")->required();
  auto* ev = app.add_subcommand("evaluate", "score exported images of attack runs");
  ev->add_option("--run", o.runs, "run id, repeatable")->required();
  ev->add_option("--format", o.format, "table format")->check(CLI::IsMember({"md", "csv"}));
  auto* rp = app.add_subcommand("report", "render the metrics of a run as tables");
  rp->add_option("--run", o.runs, "run id")->required();
  rp->add_option("--format", o.format, "table format")->check(CLI::IsMember({"md", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }
  o.verb = app.get_subcommands().front()->get_name();

  try {
    if (o.verb == "train-fl") return cli::train_fl(o, out);
    if (o.verb == "attack") return cli::attack(o, out);
    if (o.verb == "defense-sweep") return cli::defense_sweep_verb(o, out);
    if (o.verb == "ablate") return cli::ablate(o, out);
    if (o.verb == "evaluate") return cli::evaluate(o, out);
    if (o.verb == "report") return cli::report(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const RunExists& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace grnn
