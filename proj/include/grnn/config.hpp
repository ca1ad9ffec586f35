#pragma once

// Run configuration: a flat text format of `[section]` headers and
// `key = value` lines, `#` comments. Keys are addressed as section.key, which
// is also the override syntax. A few keys live at top level (no section).
//
//   seed = 7
//   [model]
//   arch = lenet-variant
//   [io]
//   dataset = synthetic-digits

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "grnn/attack.hpp"
#include "grnn/defense.hpp"
#include "grnn/flsim.hpp"

namespace grnn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueType { Int, Real, Bool, Text, RealList, TextList };

struct ConfigKey {
  std::string name;  // section.key, or key at top level
  ValueType type;
  std::string default_value;  // empty with required = true
  bool required = false;
  std::string doc;
};

// Every accepted key with its default. The README table is generated from this list.
inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = {
      {"seed", ValueType::Int, "0", false, "master seed for every stochastic choice"},
      {"fl.clients", ValueType::Int, "4", false, "client count C"},
      {"fl.batch", ValueType::Int, "1", false, "local batch size B"},
      {"fl.lr", ValueType::Real, "1.0", false, "server step size on the averaged gradient"},
      {"fl.rounds", ValueType::Int, "50", false, "round budget T"},
      {"fl.delta_g", ValueType::Real, "1e-4", false, "convergence threshold on the global loss"},
      {"fl.local_steps", ValueType::Int, "1", false, "local SGD steps per round"},
      {"fl.until_converged", ValueType::Bool, "true", false, "stop once the loss change is within delta_g"},
      {"fl.save_gradients", ValueType::Text, "last", false, "stored client gradients: none, last or all rounds"},
      {"model.arch", ValueType::Text, "", true, "lenet-variant or small-resnet"},
      {"model.classes", ValueType::Int, "10", false, "class count K"},
      {"model.init", ValueType::Text, "default", false, "default, fan-in, or a positive uniform bound"},
      {"model.fl_rounds", ValueType::Int, "1", false, "FL rounds run before an in-line attack"},
      {"generator.latent_dim", ValueType::Int, "128", false, "latent width D"},
      {"generator.width", ValueType::Int, "16", false, "base width m; 0 picks 32 up to 64x64, else 16"},
      {"attack.method", ValueType::Text, "grnn", false, "grnn or dlg"},
      {"attack.iterations", ValueType::Int, "1000", false, "iteration budget I"},
      {"attack.batch", ValueType::Int, "1", false, "batch size of the attacked gradient"},
      {"attack.lr", ValueType::Real, "1e-3", false, "RMSprop step size"},
      {"attack.smoothing", ValueType::Real, "0.99", false, "RMSprop squared-gradient smoothing"},
      {"attack.momentum", ValueType::Real, "0.5", false, "RMSprop momentum"},
      {"attack.tv_weight", ValueType::Real, "-1", false, "TV weight; negative picks the architecture default"},
      {"attack.terms", ValueType::TextList, "mse,wd,tv", false, "enabled loss terms among mse, wd, tv, cd"},
      {"attack.mse_reduction", ValueType::Text, "sum", false, "sum or mean over gradient entries"},
      {"attack.wd_per_layer", ValueType::Bool, "false", false, "average WD per parameter tensor"},
      {"attack.snapshot_every", ValueType::Int, "50", false, "snapshot period in iterations"},
      {"attack.dlg_lr", ValueType::Real, "0.1", false, "RMSprop step size of the DLG baseline"},
      {"attack.target", ValueType::Text, "client", false, "client (one client's gradient) or average"},
      {"attack.client", ValueType::Int, "0", false, "attacked client index"},
      {"attack.run", ValueType::Text, "", false, "train-fl run to replay; empty builds the target in-line"},
      {"defense.noise", ValueType::Text, "none", false, "none, gaussian or laplacian"},
      {"defense.scale", ValueType::Real, "0", false, "Gaussian sigma or Laplacian lambda"},
      {"defense.scales", ValueType::RealList, "1e-1,1e-2,1e-3,1e-4", false, "sweep grid"},
      {"defense.families", ValueType::TextList, "gaussian,laplacian", false, "sweep families"},
      {"io.dataset", ValueType::Text, "", true, "synthetic-digits, synthetic-patches, idx or cifar"},
      {"io.size", ValueType::Int, "200", false, "synthetic dataset size, or a cap on loaded examples (0 keeps all)"},
      {"io.resolution", ValueType::Int, "32", false, "synthetic image extent R"},
      {"io.images", ValueType::Text, "", false, "IDX image file or CIFAR binary file"},
      {"io.labels", ValueType::Text, "", false, "IDX label file"},
      {"io.save_images", ValueType::Bool, "true", false, "write recovered images as PGM/PPM"},
      {"io.save_snapshots", ValueType::Bool, "false", false, "also write every snapshot image"},
  };
  return keys;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string nearest_key(const std::string& name) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& k : config_schema()) {
    const std::size_t d = edit_distance(name, k.name);
    if (d < best_d) {
      best_d = d;
      best = k.name;
    }
  }
  return best;
}

inline const ConfigKey& schema_key(const std::string& name) {
  for (const auto& k : config_schema()) {
    if (k.name == name) return k;
  }
  throw ConfigError("unknown key '" + name + "' (did you mean '" + nearest_key(name) + "'?)");
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

inline bool parse_int(const std::string& s, long long& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

inline bool parse_real(const std::string& s, double& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

inline const char* type_name(ValueType t) {
  switch (t) {
    case ValueType::Int: return "an integer";
    case ValueType::Real: return "a number";
    case ValueType::Bool: return "true or false";
    case ValueType::Text: return "text";
    case ValueType::RealList: return "a comma-separated list of numbers";
    case ValueType::TextList: return "a comma-separated list";
  }
  return "?";
}

inline bool type_ok(ValueType t, const std::string& v) {
  long long i = 0;
  double d = 0;
  switch (t) {
    case ValueType::Int: return parse_int(v, i);
    case ValueType::Real: return parse_real(v, d);
    case ValueType::Bool: return v == "true" || v == "false";
    case ValueType::Text: return true;
    case ValueType::RealList:
      if (v.empty()) return false;
      for (const auto& x : split(v, ',')) {
        if (!parse_real(x, d)) return false;
      }
      return true;
    case ValueType::TextList: return !v.empty();
  }
  return false;
}

}  // namespace detail

// Validated key/value assignments; unset keys read their schema default.
class ConfigValues {
 public:
  void set(const std::string& name, const std::string& raw) {
    const ConfigKey& k = schema_key(name);
    const std::string v = detail::trim(raw);
    if (!detail::type_ok(k.type, v)) {
      throw ConfigError("key '" + name + "' expects " + detail::type_name(k.type) + ", got '" + v + "'");
    }
    values_[name] = v;
  }

  // KEY=VALUE with a dotted key.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not KEY=VALUE");
    set(detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
  }

  bool has(const std::string& name) const { return values_.count(name) > 0; }

  const std::string& raw(const std::string& name) const {
    auto it = values_.find(name);
    return it != values_.end() ? it->second : schema_key(name).default_value;
  }

  long long integer(const std::string& name) const {
    long long v = 0;
    detail::parse_int(raw(name), v);
    return v;
  }
  std::size_t count(const std::string& name) const {
    const long long v = integer(name);
    if (v < 0) throw ConfigError("key '" + name + "' must be non-negative");
    return static_cast<std::size_t>(v);
  }
  double real(const std::string& name) const {
    double v = 0;
    detail::parse_real(raw(name), v);
    return v;
  }
  bool flag(const std::string& name) const { return raw(name) == "true"; }
  const std::string& text(const std::string& name) const { return raw(name); }
  std::vector<double> reals(const std::string& name) const {
    std::vector<double> out;
    for (const auto& x : detail::split(raw(name), ',')) {
      double d = 0;
      detail::parse_real(x, d);
      out.push_back(d);
    }
    return out;
  }
  std::vector<std::string> texts(const std::string& name) const { return detail::split(raw(name), ','); }

  void check_required() const {
    for (const auto& k : config_schema()) {
      if (k.required && !has(k.name)) throw ConfigError("missing required key '" + k.name + "'");
    }
  }

  // Every key with its effective value, in schema order.
  std::string to_text() const {
    std::ostringstream out;
    std::string section = "";
    for (const auto& k : config_schema()) {
      const auto dot = k.name.find('.');
      const std::string sec = dot == std::string::npos ? "" : k.name.substr(0, dot);
      if (sec != section) {
        out << "\n[" << sec << "]\n";
        section = sec;
      }
      out << (dot == std::string::npos ? k.name : k.name.substr(dot + 1)) << " = " << raw(k.name) << "\n";
    }
    return out.str();
  }

 private:
  std::map<std::string, std::string> values_;
};

inline ConfigValues parse_config_text(const std::string& text) {
  static const std::vector<std::string> sections{"fl", "model", "generator", "attack", "defense", "io"};
  ConfigValues cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (std::find(sections.begin(), sections.end(), section) == sections.end()) {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty() || key.find('.') != std::string::npos) throw ConfigError(where + "bad key '" + key + "'");
    try {
      cfg.set(section.empty() ? key : section + "." + key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

inline ConfigValues load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Typed views

inline ModelInit model_init_from(const std::string& s) {
  if (s == "default") return {};
  if (s == "fan-in") return ModelInit::fan_in();
  double b = 0.0;
  if (!detail::parse_real(s, b) || !(b > 0.0)) {
    throw ConfigError("model.init must be default, fan-in or a positive bound, got '" + s + "'");
  }
  return ModelInit::fixed(b);
}

inline FLConfig fl_config_from(const ConfigValues& c) {
  FLConfig f;
  f.clients = c.count("fl.clients");
  f.batch_size = c.count("fl.batch");
  f.lr = c.real("fl.lr");
  f.rounds = c.count("fl.rounds");
  f.delta_g = c.real("fl.delta_g");
  f.local_steps = c.count("fl.local_steps");
  f.seed = static_cast<std::uint64_t>(c.integer("seed"));
  try {
    f.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return f;
}

inline LossTerms loss_terms_from(const std::vector<std::string>& names) {
  LossTerms t{false, false, false, false};
  for (const auto& n : names) {
    if (n == "mse") t.mse = true;
    else if (n == "wd") t.wd = true;
    else if (n == "tv") t.tv = true;
    else if (n == "cd") t.cd = true;
    else throw ConfigError("unknown loss term '" + n + "' (expected mse, wd, tv or cd)");
  }
  if (!t.mse && !t.wd && !t.cd) throw ConfigError("attack.terms needs at least one of mse, wd, cd");
  return t;
}

inline AttackConfig attack_config_from(const ConfigValues& c) {
  AttackConfig a;
  a.iterations = c.count("attack.iterations");
  a.batch_size = c.count("attack.batch");
  if (a.batch_size < 1) throw ConfigError("attack.batch must be at least 1");
  a.lr = c.real("attack.lr");
  a.smoothing = c.real("attack.smoothing");
  a.momentum = c.real("attack.momentum");
  a.tv_weight = c.real("attack.tv_weight");
  a.terms = loss_terms_from(c.texts("attack.terms"));
  const std::string& red = c.text("attack.mse_reduction");
  if (red != "sum" && red != "mean") throw ConfigError("attack.mse_reduction must be sum or mean");
  a.mse_reduction = red == "sum" ? MseReduction::Sum : MseReduction::Mean;
  a.wd_per_layer = c.flag("attack.wd_per_layer");
  a.snapshot_every = c.count("attack.snapshot_every");
  a.latent_dim = c.count("generator.latent_dim");
  a.generator_width = c.count("generator.width");
  a.dlg_lr = c.real("attack.dlg_lr");
  a.seed = static_cast<std::uint64_t>(c.integer("seed"));
  const std::string& method = c.text("attack.method");
  if (method != "grnn" && method != "dlg") throw ConfigError("attack.method must be grnn or dlg");
  const std::string& target = c.text("attack.target");
  if (target != "client" && target != "average") throw ConfigError("attack.target must be client or average");
  return a;
}

inline DefenseConfig defense_config_from(const ConfigValues& c) {
  DefenseConfig d;
  try {
    d.family = parse_noise(c.text("defense.noise"));
    for (const auto& f : c.texts("defense.families")) parse_noise(f);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  d.scale = c.real("defense.scale");
  if (d.scale < 0.0) throw ConfigError("defense.scale must be non-negative");
  for (double s : c.reals("defense.scales")) {
    if (s < 0.0) throw ConfigError("defense.scales entries must be non-negative");
  }
  d.seed = static_cast<std::uint64_t>(c.integer("seed")) ^ 0x5bd1e995ULL;
  return d;
}

// Checks every typed view so errors surface before any work starts.
inline void validate_config(const ConfigValues& c) {
  c.check_required();
  try {
    parse_architecture(c.text("model.arch"));
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (c.count("model.classes") < 2) throw ConfigError("model.classes must be at least 2");
  model_init_from(c.text("model.init"));
  fl_config_from(c);
  attack_config_from(c);
  defense_config_from(c);
  const std::string& sg = c.text("fl.save_gradients");
  if (sg != "none" && sg != "last" && sg != "all") throw ConfigError("fl.save_gradients must be none, last or all");
  const std::string& ds = c.text("io.dataset");
  if (ds != "synthetic-digits" && ds != "synthetic-patches" && ds != "idx" && ds != "cifar") {
    throw ConfigError("io.dataset must be synthetic-digits, synthetic-patches, idx or cifar, got '" + ds + "'");
  }
  if ((ds == "idx" || ds == "cifar") && c.text("io.images").empty()) {
    throw ConfigError("io.images is required for dataset " + ds);
  }
  if (ds == "idx" && c.text("io.labels").empty()) throw ConfigError("io.labels is required for dataset idx");
}

}  // namespace grnn
