#pragma once

// Training by dissipation: datasets, mini-batch schedule, the epoch loop, and reference fits.

#include <Eigen/Dense>
#include <Eigen/QR>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ss/csv.hpp"
#include "ss/error.hpp"
#include "ss/langevin.hpp"
#include "ss/lattice.hpp"
#include "ss/mechanics.hpp"
#include "ss/random.hpp"
#include "ss/stats.hpp"
#include "ss/thermo.hpp"

namespace ss {

using TargetFn = std::function<Vector(std::span<const double>)>;

struct RegisteredFunction {
  std::size_t input_dim = 1;  // 0: any
  std::size_t output_dim = 1;
  TargetFn fn;
};

inline const std::map<std::string, RegisteredFunction>& function_registry() {
  using std::cos, std::sin, std::exp;
  static const std::map<std::string, RegisteredFunction> registry = [] {
    auto scalar = [](auto f) {
      return [f](std::span<const double> u) {
        Vector y(1);
        y(0) = f(u);
        return y;
      };
    };
    std::map<std::string, RegisteredFunction> r;
    r["zero"] = {0, 1, scalar([](std::span<const double>) { return 0.0; })};
    r["cos_x"] = {1, 1, scalar([](std::span<const double> u) { return std::cos(u[0]); })};
    r["sin_x"] = {1, 1, scalar([](std::span<const double> u) { return std::sin(u[0]); })};
    r["square_x"] = {1, 1, scalar([](std::span<const double> u) { return u[0] * u[0]; })};
    r["exp_x"] = {1, 1, scalar([](std::span<const double> u) { return std::exp(u[0]); })};
    r["linear_x"] = {1, 1, scalar([](std::span<const double> u) { return 2.0 * u[0] - 1.0; })};
    r["quadratic_xy2"] = {2, 1, scalar([](std::span<const double> u) { return u[0] * u[0] + u[0] * u[1] * u[1]; })};
    r["sincos_xy"] = {2, 1, scalar([](std::span<const double> u) {
                        return std::sin(std::numbers::pi * u[0]) * std::cos(std::numbers::pi * u[1]);
                      })};
    r["bump_xy"] = {2, 1, scalar([](std::span<const double> u) {
                      const double dx = u[0] - 0.5, dy = u[1] - 0.5;
                      return std::exp(-(dx * dx + dy * dy) / 0.1);
                    })};
    r["plane_xy"] = {2, 1, scalar([](std::span<const double> u) { return 1.0 + 0.5 * u[0] - 2.0 * u[1]; })};
    return r;
  }();
  return registry;
}

inline const RegisteredFunction& lookup_function(const std::string& id, std::size_t input_dim) {
  const auto& reg = function_registry();
  const auto it = reg.find(id);
  if (it == reg.end()) throw ConfigError("unknown function id '" + id + "'", "data.function");
  if (it->second.input_dim != 0 && it->second.input_dim != input_dim)
    throw ConfigError("function '" + id + "' takes " + std::to_string(it->second.input_dim) + " inputs, domain has " +
                          std::to_string(input_dim),
                      "data.function");
  return it->second;
}

struct Dataset {
  Matrix inputs;   // N×d
  Matrix targets;  // N×m
  std::string provenance;

  std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(inputs.cols()); }
  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(targets.cols()); }

  std::vector<double> input(std::size_t i) const {
    std::vector<double> u(input_dim());
    for (std::size_t k = 0; k < u.size(); ++k) u[k] = inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    return u;
  }

  void validate() const {
    if (inputs.rows() < 1) throw ConfigError("dataset is empty", "data");
    if (targets.rows() != inputs.rows()) throw ConfigError("inputs and targets differ in length", "data");
    if (!inputs.allFinite() || !targets.allFinite()) throw ConfigError("dataset has non-finite values", "data");
  }
};

struct SyntheticSpec {
  std::string function = "zero";
  std::vector<double> lo{0.0};
  std::vector<double> hi{1.0};
  std::size_t n_points = 20;
  double noise_sigma = 0.0;

  void validate() const {
    if (lo.size() != hi.size() || lo.empty()) throw ConfigError("domain bounds must be paired", "data.domain");
    for (std::size_t k = 0; k < lo.size(); ++k)
      if (!(hi[k] > lo[k])) throw ConfigError("empty domain interval", "data.domain");
    if (n_points < 1) throw ConfigError("need at least one data point", "data.n_points");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0", "data.noise_sigma");
    lookup_function(function, lo.size());
  }
};

/// Uniform inputs over the domain, targets f(u) + ε·N(0,1).
inline Dataset synthesize(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto& f = lookup_function(spec.function, spec.lo.size());
  const auto n = static_cast<Eigen::Index>(spec.n_points);
  const auto d = static_cast<Eigen::Index>(spec.lo.size());
  Dataset data{Matrix(n, d), Matrix(n, static_cast<Eigen::Index>(f.output_dim)), "synthetic:" + spec.function};
  Rng rng(derive_seed(seed, 0xda7a));
  std::vector<double> u(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      u[static_cast<std::size_t>(k)] = rng.uniform(spec.lo[static_cast<std::size_t>(k)], spec.hi[static_cast<std::size_t>(k)]);
      data.inputs(i, k) = u[static_cast<std::size_t>(k)];
    }
    const Vector y = f.fn(u);
    for (Eigen::Index p = 0; p < y.size(); ++p) data.targets(i, p) = y(p) + spec.noise_sigma * rng.normal();
  }
  return data;
}

/// `u_1..u_d,y_1..y_m`
inline void write_dataset(std::ostream& os, const Dataset& data) {
  std::vector<std::string> header;
  for (std::size_t k = 1; k <= data.input_dim(); ++k) header.push_back("u_" + std::to_string(k));
  for (std::size_t p = 1; p <= data.output_dim(); ++p) header.push_back("y_" + std::to_string(p));
  csv::Writer w(os);
  w.header(header);
  for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index k = 0; k < data.inputs.cols(); ++k) row.push_back(data.inputs(i, k));
    for (Eigen::Index p = 0; p < data.targets.cols(); ++p) row.push_back(data.targets(i, p));
    w.row(row);
  }
}

inline Dataset read_dataset(std::istream& is, std::string provenance = "file") {
  const csv::Table t = csv::read(is);
  std::size_t d = 0, m = 0;
  for (const auto& h : t.header) {
    if (h.rfind("u_", 0) == 0) ++d;
    else if (h.rfind("y_", 0) == 0) ++m;
    else throw ConfigError("unexpected dataset column '" + h + "'");
  }
  if (d == 0 || m == 0) throw ConfigError("dataset needs u_ and y_ columns");
  Dataset data{Matrix(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(d)),
               Matrix(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(m)), std::move(provenance)};
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t k = 0; k < d; ++k)
      data.inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
          csv::parse_double(t.rows[r][t.column("u_" + std::to_string(k + 1))], "u");
    for (std::size_t p = 0; p < m; ++p)
      data.targets(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p)) =
          csv::parse_double(t.rows[r][t.column("y_" + std::to_string(p + 1))], "y");
  }
  data.validate();
  return data;
}

inline SpringBatch make_batch(const LatticeSpec& spec, const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::vector<double>> inputs;
  inputs.reserve(indices.size());
  Matrix targets(static_cast<Eigen::Index>(indices.size()), data.targets.cols());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    inputs.push_back(data.input(indices[j]));
    targets.row(static_cast<Eigen::Index>(j)) = data.targets.row(static_cast<Eigen::Index>(indices[j]));
  }
  return SpringBatch::make(spec, std::move(inputs), std::move(targets));
}

inline SpringBatch full_batch(const LatticeSpec& spec, const Dataset& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(spec, data, all);
}

/// Epoch batches drawn without replacement: each pass reshuffles and is cut into chunks of
/// `batch_size`; the last chunk of a pass holds the remainder.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n_points, std::size_t batch_size, std::uint64_t seed)
      : n_(n_points), b_(batch_size), rng_(derive_seed(seed, 0xba7c4)) {
    if (n_ == 0) throw ConfigError("no data points to batch", "data.n_points");
    if (b_ == 0 || b_ > n_) throw ConfigError("batch size must be in [1, N]", "schedule.batch_size");
  }

  std::vector<std::size_t> next() {
    if (pos_ >= order_.size()) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), 0);
      shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    const std::size_t end = std::min(pos_ + b_, order_.size());
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return out;
  }

  std::size_t epochs_per_pass() const noexcept { return (n_ + b_ - 1) / b_; }

 private:
  std::size_t n_;
  std::size_t b_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Mean over data points of the squared prediction error, summed over outputs.
inline double mse_loss(const LatticeSpec& spec, const GridState& state, const Dataset& data) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vector r = interpolate(spec, state, data.input(i)) - data.targets.row(static_cast<Eigen::Index>(i)).transpose();
    total += r.squaredNorm();
  }
  return total / static_cast<double>(data.size());
}

struct SteadyState {
  std::size_t index = 0;
  bool found = false;
};

/// First i where the windows [i-w, i) and [i, i+w) have means within rel_tol (relative) and
/// variance ratio in [0.5, 2]; returns the trace length, unflagged, when that never happens.
inline SteadyState detect_steady_state(std::span<const double> trace, std::size_t window, double rel_tol) {
  if (window == 0 || trace.size() < 2 * window) return {trace.size(), false};
  for (std::size_t i = window; i + window <= trace.size(); ++i) {
    const auto before = trace.subspan(i - window, window);
    const auto after = trace.subspan(i, window);
    const double m1 = stats::mean(before), m2 = stats::mean(after);
    const double scale = std::max(std::abs(m1), std::abs(m2));
    const bool means_close = scale == 0.0 || std::abs(m1 - m2) < rel_tol * scale;
    if (!means_close) continue;
    const double v1 = stats::variance(before), v2 = stats::variance(after);
    const double tiny = 1e-300;
    bool var_stable;
    if (v1 <= tiny && v2 <= tiny) var_stable = true;
    else if (v1 <= tiny || v2 <= tiny) var_stable = false;
    else var_stable = v2 / v1 >= 0.5 && v2 / v1 <= 2.0;
    if (var_stable) return {i, true};
  }
  return {trace.size(), false};
}

struct TrainSchedule {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double dt_epoch = 0.1;
  std::size_t inner_steps = 1;
  std::uint64_t seed = 42;
  /// Raise inner_steps until dt satisfies the stability guard; off for coarse single-step epochs.
  bool auto_substep = false;
  std::size_t steady_window = 20;
  double steady_rel_tol = 0.05;

  void validate(std::size_t n_points) const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1", "schedule.epochs");
    if (batch_size < 1 || batch_size > n_points) throw ConfigError("batch size must be in [1, N]", "schedule.batch_size");
    if (!(dt_epoch > 0.0)) throw ConfigError("epoch duration must be > 0", "schedule.dt_epoch");
    if (inner_steps < 1) throw ConfigError("inner_steps must be >= 1", "schedule.inner_steps");
  }
};

struct TrainReport {
  std::vector<double> loss;    // full-dataset MSE after each epoch
  std::vector<double> potential;
  std::vector<double> kinetic;
  std::vector<double> work;    // accumulated protocol work after each epoch's switch
  SteadyState steady;
  double steady_loss_mean = 0.0;
  double steady_loss_std = 0.0;
  double wall_seconds = 0.0;
  std::size_t inner_steps = 1;
  GridState final_state;
  WorkLedger ledger;
};

/// Heights uniform over [min y_p, max y_p] per output, velocities zero.
inline GridState random_initial_state(const LatticeSpec& spec, const Dataset& data, Rng& rng) {
  GridState s = GridState::zeros(spec);
  for (Eigen::Index p = 0; p < s.x.cols(); ++p) {
    const double lo = data.targets.col(p).minCoeff();
    const double hi = data.targets.col(p).maxCoeff();
    for (Eigen::Index a = 0; a < s.x.rows(); ++a) s.x(a, p) = lo == hi ? lo : rng.uniform(lo, hi);
  }
  return s;
}

/// Resolves the inner step count: the configured value, raised to satisfy the stability guard when requested.
inline std::size_t resolve_inner_steps(const LatticeSpec& spec, const PhysicsParams& params, const Dataset& data,
                                       const MassMatrix& mass, const TrainSchedule& schedule) {
  if (!schedule.auto_substep) return schedule.inner_steps;
  const StiffnessOperator full = assemble_stiffness(spec, params, full_batch(spec, data));
  const double dt_max = stable_dt(mass, full.K, params.friction);
  const auto needed = static_cast<std::size_t>(std::ceil(schedule.dt_epoch / dt_max - 1e-12));
  return std::max(schedule.inner_steps, needed);
}

/// Trains one trajectory. Batches depend only on schedule.seed (a shared protocol); the initial
/// heights and thermal noise come from `stream`, which defaults to schedule.seed.
inline TrainReport train(const LatticeSpec& spec, const PhysicsParams& params, const Dataset& data,
                         const TrainSchedule& schedule, std::optional<std::uint64_t> stream = std::nullopt,
                         const GridState* initial = nullptr) {
  const auto started = std::chrono::steady_clock::now();
  params.validate();
  data.validate();
  schedule.validate(data.size());
  if (data.input_dim() != spec.dim() || data.output_dim() != spec.outputs())
    throw ConfigError("dataset dimensions do not match the lattice");

  const MassMatrix mass = assemble_mass(spec, params);
  TrainReport report;
  report.inner_steps = resolve_inner_steps(spec, params, data, mass, schedule);
  const double dt = schedule.dt_epoch / static_cast<double>(report.inner_steps);

  const std::uint64_t key = stream.value_or(schedule.seed);
  Rng init_rng(derive_seed(key, 0x1417));
  Rng noise(derive_seed(key, 0x7015e));
  GridState state = initial ? *initial : random_initial_state(spec, data, init_rng);
  if (!state.matches(spec)) throw ConfigError("initial state does not match the lattice");

  BatchSchedule batches(data.size(), schedule.batch_size, schedule.seed);
  StiffnessOperator current{Matrix::Zero(mass.size(), mass.size()),
                            Matrix::Zero(mass.size(), static_cast<Eigen::Index>(spec.outputs())), 0.0};
  Vector z = pack(state);

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    const auto idx = batches.next();
    StiffnessOperator next = assemble_stiffness(spec, params, make_batch(spec, data, idx));
    const GridState at_switch = unpack(z, spec.node_count(), spec.outputs());
    report.ledger.add_switch(current.energy(at_switch.x), next.energy(at_switch.x));
    current = std::move(next);

    const LinearSDE sde = assemble_sde(spec, params, current, mass);
    EulerMaruyama em(sde, dt);
    for (std::size_t s = 0; s < report.inner_steps; ++s) {
      em.step(z, noise);
      if (!z.allFinite())
        throw NumericError("integration blew up in epoch " + std::to_string(epoch) + " (dt = " + std::to_string(dt) +
                           "); reduce the time step");
    }
    state = unpack(z, spec.node_count(), spec.outputs());
    report.loss.push_back(mse_loss(spec, state, data));
    report.potential.push_back(current.energy(state.x));
    report.kinetic.push_back(kinetic_energy(mass, state));
    report.work.push_back(report.ledger.work);
  }

  report.steady = detect_steady_state(report.loss, std::min(schedule.steady_window, report.loss.size() / 2),
                                      schedule.steady_rel_tol);
  // Statistics come from the steady tail; without a detected steady state, from the last window.
  const std::size_t from = report.steady.found
                               ? report.steady.index
                               : report.loss.size() - std::min(report.loss.size(), std::max<std::size_t>(1, schedule.steady_window));
  const std::span<const double> tail(report.loss.data() + from, report.loss.size() - from);
  report.steady_loss_mean = stats::mean(tail);
  report.steady_loss_std = stats::stddev(tail);
  report.final_state = std::move(state);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

/// `epoch,loss,U,K,W_acc`
inline void write_train_report(std::ostream& os, const TrainReport& report) {
  csv::Writer w(os);
  w.header({"epoch", "loss", "U", "K", "W_acc"});
  for (std::size_t e = 0; e < report.loss.size(); ++e)
    w.row(e + 1, report.loss[e], report.potential[e], report.kinetic[e], report.work[e]);
}

inline void write_train_summary(std::ostream& os, const TrainReport& report) {
  csv::Writer w(os);
  w.header({"steady_epoch", "steady_found", "steady_loss_mean", "steady_loss_std", "final_loss", "W_total", "n_switches"});
  w.row(report.steady.index, report.steady.found ? 1 : 0, report.steady_loss_mean, report.steady_loss_std,
        report.loss.back(), report.ledger.work, report.ledger.n_switches);
}

/// Node heights set to f at the grid nodes, velocities zero.
inline GridState oracle_fit(const LatticeSpec& spec, const TargetFn& f) {
  GridState s = GridState::zeros(spec);
  for (std::size_t n = 0; n < spec.node_count(); ++n) {
    const auto r = spec.position(spec.multi_index(n));
    const Vector y = f(r);
    if (static_cast<std::size_t>(y.size()) != spec.outputs()) throw ConfigError("function output dimension mismatch");
    s.x.row(static_cast<Eigen::Index>(n)) = y.transpose();
  }
  return s;
}

/// Heights minimizing the full-dataset loss (minimum-norm solution where nodes carry no data).
inline GridState least_squares_fit(const LatticeSpec& spec, const Dataset& data) {
  Matrix w = Matrix::Zero(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(spec.node_count()));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (const auto& [node, weight] : interpolation_weights(spec, data.input(i)))
      w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(node)) += weight;
  GridState s = GridState::zeros(spec);
  s.x = Eigen::CompleteOrthogonalDecomposition<Matrix>(w).solve(data.targets);
  return s;
}

struct GaussRule {
  std::vector<double> nodes;    // on [0, 1]
  std::vector<double> weights;  // sum to 1
};

/// Gauss–Legendre rule mapped to [0, 1], by Newton iteration on P_n.
inline GaussRule gauss_legendre(std::size_t n) {
  if (n < 1) throw ConfigError("quadrature needs at least one point");
  GaussRule rule{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 1.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double pk = ((2.0 * static_cast<double>(k) - 1.0) * x * p1 - (static_cast<double>(k) - 1.0) * p0) /
                          static_cast<double>(k);
        p0 = p1;
        p1 = pk;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double step = p1 / dp;
      x -= step;
      if (std::abs(step) < 1e-15) break;
    }
    rule.nodes[i] = 0.5 * (1.0 - x);
    rule.weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

/// Σ over cells of ∫ |f(u) - ŷ(u)|² du, tensor Gauss–Legendre with `points_per_cell` per dimension.
inline double approximation_error(const LatticeSpec& spec, const GridState& state, const TargetFn& f,
                                  std::size_t points_per_cell = 8) {
  const GaussRule rule = gauss_legendre(points_per_cell);
  const std::size_t d = spec.dim();
  double cell_volume = 1.0;
  for (double h : spec.spacing()) cell_volume *= h;

  std::vector<std::size_t> cells(d);
  for (std::size_t k = 0; k < d; ++k) cells[k] = spec.nodes_per_dim()[k] - 1;
  std::size_t n_cells = 1;
  for (std::size_t c : cells) n_cells *= c;
  std::size_t n_quad = 1;
  for (std::size_t k = 0; k < d; ++k) n_quad *= points_per_cell;

  double total = 0.0;
  std::vector<double> u(d);
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    MultiIndex ci(d);
    for (std::size_t k = d, rem = cell; k-- > 0;) {
      ci[k] = rem % cells[k];
      rem /= cells[k];
    }
    const std::size_t base = spec.node_index(ci);
    for (std::size_t q = 0; q < n_quad; ++q) {
      double weight = cell_volume;
      NodeWeights corners;
      corners.reserve(std::size_t{1} << d);
      std::vector<double> lambda(d);
      for (std::size_t k = d, rem = q; k-- > 0;) {
        const std::size_t qi = rem % points_per_cell;
        rem /= points_per_cell;
        lambda[k] = rule.nodes[qi];
        weight *= rule.weights[qi];
        u[k] = spec.origin()[k] + (static_cast<double>(ci[k]) + lambda[k]) * spec.spacing()[k];
      }
      Vector yhat = Vector::Zero(state.x.cols());
      for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
        double w = 1.0;
        std::size_t node = base;
        for (std::size_t b = 0; b < d; ++b) {
          if ((corner >> (d - 1 - b)) & 1U) {
            w *= lambda[b];
            node += spec.stride(b);
          } else {
            w *= 1.0 - lambda[b];
          }
        }
        yhat += w * state.x.row(static_cast<Eigen::Index>(node)).transpose();
      }
      total += weight * (f(u) - yhat).squaredNorm();
    }
  }
  return total;
}

}  // namespace ss
