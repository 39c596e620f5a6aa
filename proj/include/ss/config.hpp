#pragma once

// Flat `section.key = value` experiment configuration.
//
//   # comment
//   experiment = scale-sweep
//   physics.friction = 0.1
//   sweep.k = log:1e-3:1e2:16      (or lin:lo:hi:n, or an explicit list "1, 2, 4")

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ss/error.hpp"
#include "ss/mechanics.hpp"
#include "ss/training.hpp"

namespace ss {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

/// Raw key/value pairs, in file order, with duplicate detection.
class KeyValues {
 public:
  static KeyValues parse(std::istream& is) {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
      const std::string key = trim(std::string_view(t).substr(0, eq));
      const std::string value = trim(std::string_view(t).substr(eq + 1));
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      if (kv.values_.count(key)) throw ConfigError("duplicate key", key);
      kv.values_[key] = value;
      kv.order_.push_back(key);
    }
    return kv;
  }

  static KeyValues parse(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& raw(const std::string& key) const {
    used_.insert(key);
    return values_.at(key);
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }

  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& k : order_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  /// Canonical `key = value` text, sorted by key.
  std::string echo() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  mutable std::set<std::string> used_;
};

namespace detail {

inline double to_double(const std::string& s, const std::string& field) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (trim(s.substr(used)).empty() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("expected a finite number, got '" + s + "'", field);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',' || ch == ' ' || ch == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

/// Typed lookups with defaults; every error names the offending key.
class ConfigReader {
 public:
  explicit ConfigReader(const KeyValues& kv) : kv_(kv) {}

  double number(const std::string& key, double fallback) const {
    return kv_.has(key) ? detail::to_double(kv_.raw(key), key) : fallback;
  }

  std::size_t count(const std::string& key, std::size_t fallback) const {
    if (!kv_.has(key)) return fallback;
    const double v = detail::to_double(kv_.raw(key), key);
    if (v < 0 || v != std::floor(v) || v > 1e15) throw ConfigError("expected a non-negative integer", key);
    return static_cast<std::size_t>(v);
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) const {
    if (!kv_.has(key)) return fallback;
    const std::string& s = kv_.raw(key);
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(s, &used);
      if (used == s.size() && s.find('-') == std::string::npos) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("expected an unsigned integer seed, got '" + s + "'", key);
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!kv_.has(key)) return fallback;
    const std::string& s = kv_.raw(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("expected true/false, got '" + s + "'", key);
  }

  std::string text(const std::string& key, const std::string& fallback) const {
    return kv_.has(key) ? kv_.raw(key) : fallback;
  }

  std::vector<std::string> words(const std::string& key, std::vector<std::string> fallback) const {
    if (!kv_.has(key)) return fallback;
    auto out = detail::split_list(kv_.raw(key));
    if (out.empty()) throw ConfigError("list must not be empty", key);
    return out;
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) const {
    if (!kv_.has(key)) return fallback;
    return parse_axis(kv_.raw(key), key);
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) const {
    if (!kv_.has(key)) return fallback;
    std::vector<std::size_t> out;
    for (double v : parse_axis(kv_.raw(key), key)) {
      if (v < 1 || v != std::floor(v)) throw ConfigError("expected positive integers", key);
      out.push_back(static_cast<std::size_t>(v));
    }
    return out;
  }

  /// `log:lo:hi:n` (geometric), `lin:lo:hi:n`, or an explicit list.
  static std::vector<double> parse_axis(const std::string& s, const std::string& key) {
    if (s.rfind("log:", 0) == 0 || s.rfind("lin:", 0) == 0) {
      std::vector<std::string> parts;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ':')) parts.push_back(trim(item));
      if (parts.size() != 4) throw ConfigError("axis must be " + parts[0] + ":lo:hi:n", key);
      const double lo = detail::to_double(parts[1], key), hi = detail::to_double(parts[2], key);
      const double nd = detail::to_double(parts[3], key);
      if (nd < 1 || nd != std::floor(nd)) throw ConfigError("axis point count must be a positive integer", key);
      const auto n = static_cast<std::size_t>(nd);
      const bool log = parts[0] == "log";
      if (log && !(lo > 0 && hi > 0)) throw ConfigError("log axis needs positive bounds", key);
      std::vector<double> out(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double f = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        out[i] = log ? std::pow(10.0, std::log10(lo) + f * (std::log10(hi) - std::log10(lo))) : lo + f * (hi - lo);
      }
      if (n > 1) out.back() = hi;
      return out;
    }
    std::vector<double> out;
    for (const auto& w : detail::split_list(s)) out.push_back(detail::to_double(w, key));
    if (out.empty()) throw ConfigError("list must not be empty", key);
    return out;
  }

 private:
  const KeyValues& kv_;
};

enum class IntegrationMode { Fine, Coarse };

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 42;
  std::size_t n_trajectories = 256;

  std::vector<std::size_t> sticks{1};
  PhysicsParams physics;
  bool mass_equals_stiffness = false;

  IntegrationMode mode = IntegrationMode::Fine;
  double dt = 1e-3;
  std::size_t inner_steps = 1;

  SyntheticSpec data;
  std::string data_file;

  TrainSchedule schedule;

  bool mlp_enabled = false;
  std::size_t mlp_hidden = 16;
  double mlp_lr = 1e-2;
  std::size_t mlp_epochs = 0;  // 0: same as schedule.epochs

  std::vector<double> sweep_k;
  std::vector<std::size_t> sweep_sticks;
  std::vector<double> sweep_gamma;
  std::vector<double> sweep_temperature;
  std::vector<std::string> sweep_functions;

  double plateau_slope_tol = 0.05;
  std::size_t n_boot = 200;

  std::size_t quadrature_points = 8;
  bool error_trained = false;
  std::size_t error_trained_runs = 8;

  double entropy_t_end = 20.0;
  std::size_t entropy_record_every = 10;
  double entropy_x0 = 1.0;
  double entropy_cov0 = 1e-3;

  KeyValues source;

  /// Node counts for a lattice with `sticks` per dimension.
  LatticeSpec lattice_for(const std::vector<std::size_t>& per_dim, std::size_t outputs = 1) const {
    return LatticeSpec::covering(per_dim, data.lo, data.hi, outputs);
  }

  /// Same stick count in every input dimension.
  std::vector<std::size_t> uniform_sticks(std::size_t n) const { return std::vector<std::size_t>(data.lo.size(), n); }

  TrainSchedule train_schedule() const {
    TrainSchedule s = schedule;
    s.seed = seed;
    if (mode == IntegrationMode::Coarse) {
      s.inner_steps = 1;
      s.auto_substep = false;
    } else {
      s.inner_steps = std::max<std::size_t>(1, inner_steps);
      s.auto_substep = true;
    }
    return s;
  }
};

inline const std::set<std::string>& known_experiments() {
  static const std::set<std::string> ids{"fit", "scale-sweep", "tlb-expressivity", "tlb-heatmap", "error-scaling",
                                         "entropy"};
  return ids;
}

inline ExperimentConfig parse_config(KeyValues kv, const std::string& experiment) {
  if (!known_experiments().count(experiment)) throw ConfigError("unknown experiment '" + experiment + "'", "experiment");
  ConfigReader r(kv);
  ExperimentConfig c;
  c.experiment = r.text("experiment", experiment);
  if (c.experiment != experiment)
    throw ConfigError("config is for '" + c.experiment + "' but '" + experiment + "' was requested", "experiment");
  c.seed = r.seed("seed", 42);
  c.n_trajectories = r.count("n_trajectories", c.n_trajectories);
  if (c.n_trajectories < 1) throw ConfigError("need at least one trajectory", "n_trajectories");

  c.data.function = r.text("data.function", "cos_x");
  c.data.lo = r.numbers("data.lo", {0.0});
  c.data.hi = r.numbers("data.hi", {2.0 * std::numbers::pi});
  c.data.n_points = r.count("data.n_points", 20);
  c.data.noise_sigma = r.number("data.noise_sigma", 0.0);
  c.data_file = r.text("data.file", "");
  if (c.data.lo.size() != c.data.hi.size()) throw ConfigError("data.lo and data.hi differ in length", "data.hi");
  for (std::size_t k = 0; k < c.data.lo.size(); ++k)
    if (!(c.data.hi[k] > c.data.lo[k])) throw ConfigError("empty domain interval", "data.hi");
  if (c.data.noise_sigma < 0) throw ConfigError("noise must be >= 0", "data.noise_sigma");
  if (c.data.n_points < 1) throw ConfigError("need at least one data point", "data.n_points");
  if (c.data_file.empty()) {
    const auto& reg = function_registry();
    if (!reg.count(c.data.function)) throw ConfigError("unknown function id '" + c.data.function + "'", "data.function");
    lookup_function(c.data.function, c.data.lo.size());
  }

  const auto sticks = r.counts("lattice.sticks", {1});
  c.sticks = sticks.size() == 1 ? std::vector<std::size_t>(c.data.lo.size(), sticks[0]) : sticks;
  if (c.sticks.size() != c.data.lo.size())
    throw ConfigError("lattice.sticks needs one entry per input dimension", "lattice.sticks");

  c.physics.mass = r.number("physics.mass", 1.0);
  c.physics.stiffness = r.number("physics.stiffness", 1.0);
  c.physics.friction = r.number("physics.friction", 1.0);
  c.physics.temperature = r.number("physics.temperature", 0.0);
  c.physics.boltzmann = r.number("physics.boltzmann", 1.0);
  const std::string noise = r.text("physics.noise", "mass_consistent");
  if (noise == "mass_consistent") c.physics.noise = NoiseModel::MassConsistent;
  else if (noise == "diagonal") c.physics.noise = NoiseModel::Diagonal;
  else throw ConfigError("noise must be mass_consistent or diagonal", "physics.noise");
  c.mass_equals_stiffness = r.flag("physics.mass_equals_stiffness", false);
  c.physics.validate();

  const std::string mode = r.text("integration.mode", "fine");
  if (mode == "fine") c.mode = IntegrationMode::Fine;
  else if (mode == "coarse") c.mode = IntegrationMode::Coarse;
  else throw ConfigError("mode must be fine or coarse", "integration.mode");
  c.dt = r.number("integration.dt", 1e-3);
  if (!(c.dt > 0)) throw ConfigError("dt must be > 0", "integration.dt");
  c.inner_steps = r.count("integration.inner_steps", 1);
  if (c.inner_steps < 1) throw ConfigError("inner_steps must be >= 1", "integration.inner_steps");

  c.schedule.epochs = r.count("schedule.epochs", 300);
  c.schedule.batch_size = r.count("schedule.batch_size", 16);
  c.schedule.dt_epoch = r.number("schedule.dt_epoch", 0.1);
  c.schedule.steady_window = r.count("schedule.steady_window", 20);
  c.schedule.steady_rel_tol = r.number("schedule.steady_rel_tol", 0.05);
  if (c.schedule.epochs < 1) throw ConfigError("epochs must be >= 1", "schedule.epochs");
  if (!(c.schedule.dt_epoch > 0)) throw ConfigError("epoch duration must be > 0", "schedule.dt_epoch");
  if (c.data_file.empty() && (c.schedule.batch_size < 1 || c.schedule.batch_size > c.data.n_points))
    throw ConfigError("batch size must be in [1, n_points]", "schedule.batch_size");
  if (!(c.schedule.steady_rel_tol > 0)) throw ConfigError("tolerance must be > 0", "schedule.steady_rel_tol");

  c.mlp_enabled = r.flag("mlp.enabled", false);
  c.mlp_hidden = r.count("mlp.hidden", 16);
  c.mlp_lr = r.number("mlp.lr", 1e-2);
  c.mlp_epochs = r.count("mlp.epochs", 0);
  if (c.mlp_hidden < 1) throw ConfigError("hidden units must be >= 1", "mlp.hidden");
  if (c.mlp_lr < 0) throw ConfigError("learning rate must be >= 0", "mlp.lr");

  c.sweep_k = r.numbers("sweep.k", {});
  c.sweep_sticks = r.counts("sweep.sticks", {});
  c.sweep_gamma = r.numbers("sweep.gamma", {});
  c.sweep_temperature = r.numbers("sweep.temperature", {});
  c.sweep_functions = r.words("sweep.functions", {});
  for (double k : c.sweep_k)
    if (!(k >= 0)) throw ConfigError("stiffness values must be >= 0", "sweep.k");
  for (double g : c.sweep_gamma)
    if (!(g >= 0)) throw ConfigError("friction values must be >= 0", "sweep.gamma");
  for (double t : c.sweep_temperature)
    if (!(t >= 0)) throw ConfigError("temperatures must be >= 0", "sweep.temperature");
  for (const auto& f : c.sweep_functions) lookup_function(f, c.data.lo.size());

  c.plateau_slope_tol = r.number("plateau.slope_tol", 0.05);
  c.n_boot = r.count("jarzynski.n_boot", 200);
  c.quadrature_points = r.count("error.quadrature_points", 8);
  if (c.quadrature_points < 1) throw ConfigError("need at least one quadrature point", "error.quadrature_points");
  c.error_trained = r.flag("error.trained", false);
  c.error_trained_runs = r.count("error.trained_runs", 8);
  c.entropy_t_end = r.number("entropy.t_end", 20.0);
  c.entropy_record_every = r.count("entropy.record_every", 10);
  c.entropy_x0 = r.number("entropy.x0", 1.0);
  c.entropy_cov0 = r.number("entropy.cov0", 1e-3);
  if (!(c.entropy_t_end > 0)) throw ConfigError("t_end must be > 0", "entropy.t_end");
  if (c.entropy_record_every < 1) throw ConfigError("record_every must be >= 1", "entropy.record_every");
  if (!(c.entropy_cov0 > 0)) throw ConfigError("initial covariance must be > 0", "entropy.cov0");

  // Each driver requires its sweep axes.
  auto need = [&](bool ok, const char* key) {
    if (!ok) throw ConfigError("this experiment needs a non-empty sweep axis", key);
  };
  if (experiment == "scale-sweep" || experiment == "tlb-expressivity" || experiment == "tlb-heatmap")
    need(!c.sweep_k.empty(), "sweep.k");
  if (experiment == "tlb-expressivity") need(!c.sweep_sticks.empty(), "sweep.sticks");
  if (experiment == "tlb-heatmap") {
    need(!c.sweep_gamma.empty(), "sweep.gamma");
    need(!c.sweep_temperature.empty(), "sweep.temperature");
  }
  if (experiment == "error-scaling") {
    need(!c.sweep_sticks.empty(), "sweep.sticks");
    need(!c.sweep_functions.empty(), "sweep.functions");
  }
  if (experiment == "entropy") {
    need(!c.sweep_gamma.empty(), "sweep.gamma");
    need(!c.sweep_k.empty(), "sweep.k");
    if (!(c.physics.temperature > 0)) throw ConfigError("entropy rates need T > 0", "physics.temperature");
  }

  const auto unused = kv.unused();
  if (!unused.empty()) throw ConfigError("unknown key", unused.front());
  c.source = std::move(kv);
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& experiment) {
  return parse_config(KeyValues::parse(text), experiment);
}

inline ExperimentConfig load_config(const std::string& path, const std::string& experiment) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'", "--config");
  return parse_config(KeyValues::parse(in), experiment);
}

}  // namespace ss
