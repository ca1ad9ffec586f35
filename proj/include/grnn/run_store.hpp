#pragma once

// Run directories and metrics files.
//
//   <root>/<run id>/manifest.json   run id, seed, config, file inventory, timestamps
//                   config.cfg      effective configuration, every key
//                   metrics.jsonl   one record per line
//                   images/         PGM/PPM exports
//                   checkpoints/    models and stored gradients
//
// Metrics records carry no timestamps, so two runs with the same seed and
// configuration write byte-identical metrics files.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "grnn/binary_io.hpp"

namespace grnn {

namespace fs = std::filesystem;

struct MetricRecord {
  std::string run;
  std::string phase;
  std::size_t iteration = 0;
  std::vector<std::pair<std::string, double>> fields;  // written in this order

  double get(const std::string& name) const {
    for (const auto& [k, v] : fields) {
      if (k == name) return v;
    }
    throw std::out_of_range("metric record has no field '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& f : fields) {
      if (f.first == name) return true;
    }
    return false;
  }
};

inline std::string metric_line(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["run"] = r.run;
  j["phase"] = r.phase;
  j["iteration"] = r.iteration;
  nlohmann::ordered_json f = nlohmann::ordered_json::object();
  // JSON has no NaN or infinity; those are written as null.
  for (const auto& [k, v] : r.fields) f[k] = std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json();
  j["fields"] = f;
  return j.dump();
}

inline MetricRecord parse_metric_line(const std::string& line, std::size_t lineno = 0) {
  try {
    const auto j = nlohmann::ordered_json::parse(line);
    MetricRecord r;
    r.run = j.at("run").get<std::string>();
    r.phase = j.at("phase").get<std::string>();
    r.iteration = j.at("iteration").get<std::size_t>();
    for (const auto& [k, v] : j.at("fields").items()) {
      r.fields.emplace_back(k, v.is_null() ? std::nan("") : v.get<double>());
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad metrics record on line " + std::to_string(lineno) + ": " + e.what(), 0);
  }
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : out_(path, std::ios::app) {
    if (!out_) throw IoError("cannot open metrics file " + path);
  }
  void write(const MetricRecord& r) {
    out_ << metric_line(r) << '\n';
    out_.flush();
    if (!out_) throw IoError("metrics write failed");
  }

 private:
  std::ofstream out_;
};

inline std::vector<MetricRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file " + path);
  std::vector<MetricRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty()) out.push_back(parse_metric_line(line, lineno));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run directories

class RunExists : public std::runtime_error {
 public:
  explicit RunExists(const std::string& dir)
      : std::runtime_error("run directory " + dir + " already exists (pass --force to overwrite)") {}
};

inline fs::path runs_root() {
  const char* env = std::getenv("GRNN_RUNS_DIR");
  return env && *env ? fs::path(env) : fs::path("runs");
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class RunDir {
 public:
  // Creates <root>/<id> with its subdirectories. An existing directory is
  // an error unless `force`, in which case it is removed first.
  static RunDir create(const fs::path& root, const std::string& id, bool force) {
    if (id.empty() || id.find('/') != std::string::npos || id == "." || id == "..") {
      throw std::invalid_argument("bad run id '" + id + "'");
    }
    RunDir r;
    r.id_ = id;
    r.dir_ = root / id;
    if (fs::exists(r.dir_)) {
      if (!force) throw RunExists(r.dir_.string());
      fs::remove_all(r.dir_);
    }
    fs::create_directories(r.dir_ / "images");
    fs::create_directories(r.dir_ / "checkpoints");
    r.created_ = utc_timestamp();
    return r;
  }

  static RunDir open(const fs::path& root, const std::string& id) {
    RunDir r;
    r.id_ = id;
    r.dir_ = root / id;
    if (!fs::is_directory(r.dir_)) throw IoError("no run directory " + r.dir_.string());
    return r;
  }

  const std::string& id() const { return id_; }
  const fs::path& dir() const { return dir_; }
  fs::path metrics_path() const { return dir_ / "metrics.jsonl"; }
  fs::path config_path() const { return dir_ / "config.cfg"; }
  fs::path manifest_path() const { return dir_ / "manifest.json"; }
  fs::path image_path(const std::string& name) const { return dir_ / "images" / name; }
  fs::path checkpoint_path(const std::string& name) const { return dir_ / "checkpoints" / name; }

  // Every regular file below the run directory except the manifest, relative and sorted.
  std::vector<std::string> inventory() const {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir_)) {
      if (e.is_regular_file() && e.path() != manifest_path()) {
        files.push_back(fs::relative(e.path(), dir_).generic_string());
      }
    }
    std::sort(files.begin(), files.end());
    return files;
  }

  void write_manifest(std::uint64_t seed, const std::string& command, const std::string& config_text) const {
    nlohmann::ordered_json j;
    j["run"] = id_;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = config_text;
    j["files"] = inventory();
    j["created"] = created_;
    j["finished"] = utc_timestamp();
    std::ofstream out(manifest_path());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write manifest in " + dir_.string());
  }

 private:
  std::string id_;
  fs::path dir_;
  std::string created_;
};

}  // namespace grnn
