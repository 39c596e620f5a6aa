#pragma once

// Experiment drivers: each reads an ExperimentConfig, runs its sweep on a worker pool and writes
// CSV tables plus manifest.txt into the output directory.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "ss/config.hpp"
#include "ss/csv.hpp"
#include "ss/langevin.hpp"
#include "ss/mlp.hpp"
#include "ss/stats.hpp"
#include "ss/thermo.hpp"
#include "ss/training.hpp"

namespace ss {

namespace tag {
inline constexpr std::uint64_t data = 0xda7a5e7;
inline constexpr std::uint64_t trajectory = 0x7a1;
inline constexpr std::uint64_t mlp = 0x3119;
inline constexpr std::uint64_t mlpf = 0x311f;
}  // namespace tag

/// Runs fn(0..n-1) on `jobs` threads; results are stored by index so the output never depends on scheduling.
/// The first exception (lowest index) is rethrown after all tasks finish.
template <typename Fn>
auto parallel_map(std::size_t n, std::size_t jobs, Fn fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<R> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

struct RunContext {
  std::filesystem::path out_dir = "results";
  std::size_t jobs = 1;
  std::string version = "dev";
};

struct RunResult {
  std::vector<std::string> outputs;
  std::size_t failed_points = 0;
  std::size_t total_points = 0;
};

inline const double kNaN = std::numeric_limits<double>::quiet_NaN();

namespace detail {

inline std::ofstream open_output(const RunContext& ctx, RunResult& result, const std::string& name) {
  std::filesystem::create_directories(ctx.out_dir);
  std::ofstream out(ctx.out_dir / name);
  if (!out) throw Error("cannot write '" + (ctx.out_dir / name).string() + "'");
  result.outputs.push_back(name);
  return out;
}

inline std::string fmt_tag(double v) { return csv::num(v); }

}  // namespace detail

inline void write_manifest(const RunContext& ctx, const ExperimentConfig& cfg, const RunResult& result,
                           double wall_seconds) {
  std::filesystem::create_directories(ctx.out_dir);
  std::ofstream out(ctx.out_dir / "manifest.txt");
  out << "# ss run manifest\n";
  out << "experiment = " << cfg.experiment << "\n";
  out << "version = " << ctx.version << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "jobs = " << ctx.jobs << "\n";
  out << "wall_seconds = " << csv::num(wall_seconds) << "\n";
  out << "points = " << result.total_points << "\n";
  out << "failed_points = " << result.failed_points << "\n";
  for (const auto& o : result.outputs) out << "output = " << o << "\n";
  out << "# config\n" << cfg.source.echo();
  std::ofstream echo(ctx.out_dir / "config.ini");
  echo << cfg.source.echo();
}

inline Dataset load_dataset(const ExperimentConfig& cfg) {
  if (!cfg.data_file.empty()) {
    std::ifstream in(cfg.data_file);
    if (!in) throw ConfigError("cannot open dataset '" + cfg.data_file + "'", "data.file");
    Dataset d = read_dataset(in, cfg.data_file);
    if (d.input_dim() != cfg.data.lo.size()) throw ConfigError("dataset dimension differs from data.lo", "data.file");
    return d;
  }
  return synthesize(cfg.data, derive_seed(cfg.seed, tag::data));
}

// ---------------------------------------------------------------------------------------------
// Scale sweeps and the learning barrier

struct ScalePoint {
  double k = 0.0;
  double mass = 0.0;
  double loss_mean = kNaN;
  double loss_std = kNaN;
  double delta_f = kNaN;
  double delta_f_lo = kNaN;
  double delta_f_hi = kNaN;
  double delta_f_std = kNaN;
  double mean_work = kNaN;
  std::size_t n_ok = 0;
  std::size_t inner_steps = 0;
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
};

struct TrajectoryOutcome {
  double steady_loss = kNaN;
  double work = kNaN;
  std::size_t inner_steps = 0;
  std::string error;
};

/// Trains n_trajectories per stiffness value (M = k when configured) and reduces each point to its
/// steady-state loss band and Jarzynski ΔF. `sweep_key` separates independent sweeps.
inline std::vector<ScalePoint> scale_sweep(const ExperimentConfig& cfg, const Dataset& data, const LatticeSpec& spec,
                                           const PhysicsParams& base, const std::vector<double>& ks,
                                           std::uint64_t sweep_key, std::size_t jobs) {
  const std::size_t n_traj = cfg.n_trajectories;
  const TrainSchedule schedule = cfg.train_schedule();
  auto physics_at = [&](double k) {
    PhysicsParams p = base;
    p.stiffness = k;
    if (cfg.mass_equals_stiffness) p.mass = k;
    return p;
  };
  const auto outcomes = parallel_map(ks.size() * n_traj, jobs, [&](std::size_t task) {
    const std::size_t point = task / n_traj, traj = task % n_traj;
    TrajectoryOutcome out;
    try {
      const TrainReport r =
          train(spec, physics_at(ks[point]), data, schedule, derive_seed(cfg.seed, sweep_key, point, tag::trajectory, traj));
      out.steady_loss = r.steady_loss_mean;
      out.work = r.ledger.work;
      out.inner_steps = r.inner_steps;
    } catch (const NumericError& e) {
      out.error = e.what();
    } catch (const ConfigError& e) {
      out.error = e.what();
    }
    return out;
  });

  std::vector<ScalePoint> points(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    ScalePoint& pt = points[i];
    const PhysicsParams p = physics_at(ks[i]);
    pt.k = p.stiffness;
    pt.mass = p.mass;
    std::vector<double> losses, works;
    for (std::size_t t = 0; t < n_traj; ++t) {
      const auto& o = outcomes[i * n_traj + t];
      if (!o.error.empty()) {
        pt.status = "numeric_failure";
        continue;
      }
      losses.push_back(o.steady_loss);
      works.push_back(o.work);
      pt.inner_steps = o.inner_steps;
    }
    pt.n_ok = losses.size();
    if (losses.empty()) continue;
    pt.loss_mean = stats::mean(losses);
    pt.loss_std = losses.size() > 1 ? stats::stddev(losses) : 0.0;
    pt.mean_work = stats::mean(works);
    if (!pt.ok()) continue;
    try {
      const auto est = jarzynski_bootstrap(works, p.thermal_energy(), cfg.n_boot, derive_seed(cfg.seed, sweep_key, i));
      pt.delta_f = est.delta_f;
      pt.delta_f_lo = est.boot_lo;
      pt.delta_f_hi = est.boot_hi;
      pt.delta_f_std = est.boot_std;
    } catch (const EstimatorUndefined&) {
      pt.status = "estimator_undefined";
    }
  }
  return points;
}

/// `k,M,loss_mean,loss_std,deltaF,deltaF_lo,deltaF_hi` then diagnostics.
inline void write_scale_points(std::ostream& os, const std::vector<ScalePoint>& points) {
  csv::Writer w(os);
  w.header({"k", "M", "loss_mean", "loss_std", "deltaF", "deltaF_lo", "deltaF_hi", "deltaF_std", "mean_W", "n_ok",
            "inner_steps", "status"});
  for (const auto& p : points)
    w.row(p.k, p.mass, p.loss_mean, p.loss_std, p.delta_f, p.delta_f_lo, p.delta_f_hi, p.delta_f_std, p.mean_work,
          p.n_ok, p.inner_steps, p.status);
}

struct Plateau {
  double delta_f_min = kNaN;
  double sigma = kNaN;  // typical bootstrap standard error of the plateau points
  bool found = false;
  std::size_t n_points = 0;
  double k_lo = kNaN;
  double k_hi = kNaN;
};

namespace detail {

inline std::vector<ScalePoint> usable_sorted(const std::vector<ScalePoint>& points) {
  std::vector<ScalePoint> pts;
  for (const auto& p : points)
    if (p.ok() && std::isfinite(p.delta_f) && p.k > 0) pts.push_back(p);
  std::sort(pts.begin(), pts.end(), [](const ScalePoint& a, const ScalePoint& b) { return a.k < b.k; });
  return pts;
}

/// |dΔF/dlog10 k| / |mean ΔF| from a least-squares line through the first `n` points.
inline double relative_slope(const std::vector<ScalePoint>& pts, std::size_t n) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < n; ++i) {
    x.push_back(std::log10(pts[i].k));
    y.push_back(pts[i].delta_f);
  }
  const double scale = std::abs(stats::mean(y));
  if (scale == 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(stats::linear_fit(x, y).slope) / scale;
}

}  // namespace detail

/// The longest run of ΔF(k) starting at the smallest k (at least three points) whose fitted relative
/// slope per decade stays below `slope_tol`. ΔF_min is the median over that run; without one it falls
/// back to the smallest-k value and `found` is false.
inline Plateau extract_plateau(const std::vector<ScalePoint>& points, double slope_tol) {
  const auto pts = detail::usable_sorted(points);
  Plateau out;
  if (pts.empty()) return out;
  std::size_t end = 1;
  for (std::size_t n = 3; n <= pts.size(); ++n)
    if (detail::relative_slope(pts, n) < slope_tol) end = n;
  out.found = end >= 3;
  std::vector<double> values, sigmas;
  for (std::size_t i = 0; i < end; ++i) {
    values.push_back(pts[i].delta_f);
    sigmas.push_back(pts[i].delta_f_std);
  }
  out.delta_f_min = stats::median(values);
  out.sigma = stats::median(sigmas);
  out.n_points = end;
  out.k_lo = pts.front().k;
  out.k_hi = pts[end - 1].k;
  return out;
}

struct ScaleShape {
  double bottom_relative_slope = kNaN;  // |dΔF/dlog10 k| / |mean ΔF| over the lowest `decades`
  double loss_ratio = kNaN;             // loss at the smallest k over loss at the largest k
  std::size_t bottom_points = 0;
};

inline ScaleShape scale_shape(const std::vector<ScalePoint>& points, double decades = 2.0) {
  const auto pts = detail::usable_sorted(points);
  ScaleShape s;
  if (pts.size() < 2) return s;
  for (const auto& p : pts)
    if (std::log10(p.k) <= std::log10(pts.front().k) + decades + 1e-9) ++s.bottom_points;
  if (s.bottom_points >= 2) s.bottom_relative_slope = detail::relative_slope(pts, s.bottom_points);
  s.loss_ratio = pts.front().loss_mean / pts.back().loss_mean;
  return s;
}

inline RunResult run_scale_sweep(const ExperimentConfig& cfg, const RunContext& ctx,
                                 std::vector<ScalePoint>* points_out = nullptr) {
  RunResult result;
  const Dataset data = load_dataset(cfg);
  const LatticeSpec spec = cfg.lattice_for(cfg.sticks, data.output_dim());
  const auto points = scale_sweep(cfg, data, spec, cfg.physics, cfg.sweep_k, 0, ctx.jobs);
  {
    auto out = detail::open_output(ctx, result, "scale_sweep.csv");
    write_scale_points(out, points);
  }
  const Plateau plateau = extract_plateau(points, cfg.plateau_slope_tol);
  const ScaleShape shape = scale_shape(points);
  {
    auto out = detail::open_output(ctx, result, "scale_summary.csv");
    csv::Writer w(out);
    w.header({"deltaF_min", "deltaF_min_sigma", "plateau_found", "plateau_points", "plateau_k_lo", "plateau_k_hi",
              "bottom_relative_slope", "loss_ratio"});
    w.row(plateau.delta_f_min, plateau.sigma, plateau.found ? 1 : 0, plateau.n_points, plateau.k_lo, plateau.k_hi,
          shape.bottom_relative_slope, shape.loss_ratio);
  }
  {
    auto out = detail::open_output(ctx, result, "dataset.csv");
    write_dataset(out, data);
  }
  result.total_points = points.size();
  for (const auto& p : points) result.failed_points += p.ok() ? 0 : 1;
  if (points_out) *points_out = points;
  return result;
}

struct ExpressivityRow {
  std::size_t sticks = 0;
  Plateau plateau;
  std::vector<ScalePoint> sweep;
};

struct PowerLaw {
  double exponent = kNaN;
  double r2 = kNaN;
  double mean_doubling_ratio = kNaN;
};

inline PowerLaw expressivity_fit(const std::vector<ExpressivityRow>& rows) {
  std::vector<double> x, y, ratios;
  for (const auto& r : rows)
    if (std::isfinite(r.plateau.delta_f_min) && r.plateau.delta_f_min > 0) {
      x.push_back(static_cast<double>(r.sticks));
      y.push_back(r.plateau.delta_f_min);
    }
  PowerLaw p;
  if (x.size() >= 2) {
    const auto fit = stats::loglog_fit(x, y);
    p.exponent = fit.slope;
    p.r2 = fit.r2;
  }
  for (std::size_t i = 0; i + 1 < rows.size(); ++i)
    if (rows[i + 1].sticks == 2 * rows[i].sticks && rows[i].plateau.delta_f_min != 0.0)
      ratios.push_back(rows[i + 1].plateau.delta_f_min / rows[i].plateau.delta_f_min);
  if (!ratios.empty()) p.mean_doubling_ratio = stats::mean(ratios);
  return p;
}

inline RunResult run_tlb_expressivity(const ExperimentConfig& cfg, const RunContext& ctx,
                                      std::vector<ExpressivityRow>* rows_out = nullptr) {
  RunResult result;
  const Dataset data = load_dataset(cfg);
  std::vector<ExpressivityRow> rows;
  for (std::size_t i = 0; i < cfg.sweep_sticks.size(); ++i) {
    const LatticeSpec spec = cfg.lattice_for(cfg.uniform_sticks(cfg.sweep_sticks[i]), data.output_dim());
    ExpressivityRow row;
    row.sticks = spec.stick_count();
    row.sweep = scale_sweep(cfg, data, spec, cfg.physics, cfg.sweep_k, 100 + i, ctx.jobs);
    row.plateau = extract_plateau(row.sweep, cfg.plateau_slope_tol);
    auto out = detail::open_output(ctx, result, "scale_Ns" + std::to_string(row.sticks) + ".csv");
    write_scale_points(out, row.sweep);
    result.total_points += row.sweep.size();
    for (const auto& p : row.sweep) result.failed_points += p.ok() ? 0 : 1;
    rows.push_back(std::move(row));
  }
  {
    auto out = detail::open_output(ctx, result, "tlb_expressivity.csv");
    csv::Writer w(out);
    w.header({"N_s", "deltaF_min", "deltaF_min_sigma", "plateau_found", "plateau_points", "plateau_k_lo", "plateau_k_hi"});
    for (const auto& r : rows)
      w.row(r.sticks, r.plateau.delta_f_min, r.plateau.sigma, r.plateau.found ? 1 : 0, r.plateau.n_points,
            r.plateau.k_lo, r.plateau.k_hi);
  }
  {
    const PowerLaw fit = expressivity_fit(rows);
    auto out = detail::open_output(ctx, result, "tlb_expressivity_fit.csv");
    csv::Writer w(out);
    w.header({"exponent", "r2", "mean_doubling_ratio"});
    w.row(fit.exponent, fit.r2, fit.mean_doubling_ratio);
  }
  if (rows_out) *rows_out = std::move(rows);
  return result;
}

struct HeatmapCell {
  double gamma = 0.0;
  double temperature = 0.0;
  Plateau plateau;
  std::vector<ScalePoint> sweep;
};

struct OriginFit {
  double slope = kNaN;
  double r2 = kNaN;
};

/// ΔF_min against k_b T γ, a line through the origin.
inline OriginFit heatmap_fit(const std::vector<HeatmapCell>& cells, double boltzmann) {
  std::vector<double> x, y;
  for (const auto& c : cells)
    if (std::isfinite(c.plateau.delta_f_min)) {
      x.push_back(boltzmann * c.temperature * c.gamma);
      y.push_back(c.plateau.delta_f_min);
    }
  OriginFit f;
  if (x.size() >= 2) {
    const auto fit = stats::fit_through_origin(x, y);
    f.slope = fit.slope;
    f.r2 = fit.r2;
  }
  return f;
}

inline RunResult run_tlb_heatmap(const ExperimentConfig& cfg, const RunContext& ctx,
                                 std::vector<HeatmapCell>* cells_out = nullptr) {
  RunResult result;
  const Dataset data = load_dataset(cfg);
  const LatticeSpec spec = cfg.lattice_for(cfg.sticks, data.output_dim());
  std::vector<HeatmapCell> cells;
  for (std::size_t gi = 0; gi < cfg.sweep_gamma.size(); ++gi)
    for (std::size_t ti = 0; ti < cfg.sweep_temperature.size(); ++ti) {
      HeatmapCell cell;
      cell.gamma = cfg.sweep_gamma[gi];
      cell.temperature = cfg.sweep_temperature[ti];
      PhysicsParams p = cfg.physics;
      p.friction = cell.gamma;
      p.temperature = cell.temperature;
      cell.sweep = scale_sweep(cfg, data, spec, p, cfg.sweep_k, 1000 + gi * cfg.sweep_temperature.size() + ti, ctx.jobs);
      cell.plateau = extract_plateau(cell.sweep, cfg.plateau_slope_tol);
      result.total_points += cell.sweep.size();
      for (const auto& pt : cell.sweep) result.failed_points += pt.ok() ? 0 : 1;
      cells.push_back(std::move(cell));
    }
  {
    auto out = detail::open_output(ctx, result, "tlb_heatmap.csv");
    csv::Writer w(out);
    w.header({"gamma", "T", "deltaF_min", "deltaF_min_sigma", "plateau_found", "plateau_points"});
    for (const auto& c : cells)
      w.row(c.gamma, c.temperature, c.plateau.delta_f_min, c.plateau.sigma, c.plateau.found ? 1 : 0, c.plateau.n_points);
  }
  {
    auto out = detail::open_output(ctx, result, "tlb_heatmap_sweeps.csv");
    csv::Writer w(out);
    w.header({"gamma", "T", "k", "M", "loss_mean", "loss_std", "deltaF", "deltaF_lo", "deltaF_hi", "status"});
    for (const auto& c : cells)
      for (const auto& p : c.sweep)
        w.row(c.gamma, c.temperature, p.k, p.mass, p.loss_mean, p.loss_std, p.delta_f, p.delta_f_lo, p.delta_f_hi, p.status);
  }
  {
    const OriginFit fit = heatmap_fit(cells, cfg.physics.boltzmann);
    auto out = detail::open_output(ctx, result, "tlb_heatmap_fit.csv");
    csv::Writer w(out);
    w.header({"slope_vs_kbTgamma", "r2"});
    w.row(fit.slope, fit.r2);
  }
  if (cells_out) *cells_out = std::move(cells);
  return result;
}

// ---------------------------------------------------------------------------------------------
// Approximation error scaling

struct ErrorRow {
  std::string function;
  std::size_t sticks = 0;
  double e_oracle = kNaN;
  double e_trained_mean = kNaN;
  double e_trained_std = kNaN;
};

struct ErrorSlope {
  std::string function;
  std::string path;
  stats::LinearFit fit;
};

inline std::vector<ErrorSlope> error_slopes(const std::vector<ErrorRow>& rows, const std::vector<std::string>& functions) {
  std::vector<ErrorSlope> out;
  for (const auto& f : functions) {
    std::vector<double> n, eo, et, nt;
    for (const auto& r : rows) {
      if (r.function != f) continue;
      if (r.e_oracle > 0) {
        n.push_back(static_cast<double>(r.sticks));
        eo.push_back(r.e_oracle);
      }
      if (r.e_trained_mean > 0) {
        nt.push_back(static_cast<double>(r.sticks));
        et.push_back(r.e_trained_mean);
      }
    }
    if (n.size() >= 2) out.push_back({f, "oracle", stats::loglog_fit(n, eo)});
    if (nt.size() >= 2) out.push_back({f, "trained", stats::loglog_fit(nt, et)});
  }
  return out;
}

inline RunResult run_error_scaling(const ExperimentConfig& cfg, const RunContext& ctx,
                                   std::vector<ErrorRow>* rows_out = nullptr) {
  RunResult result;
  const std::size_t n_f = cfg.sweep_functions.size(), n_s = cfg.sweep_sticks.size();
  const std::size_t runs = cfg.error_trained ? cfg.error_trained_runs : 0;
  const TrainSchedule schedule = cfg.train_schedule();
  // task layout: (function, sticks, run) with run 0..runs, run == runs being the oracle
  const auto values = parallel_map(n_f * n_s * (runs + 1), ctx.jobs, [&](std::size_t task) {
    const std::size_t fi = task / (n_s * (runs + 1));
    const std::size_t si = (task / (runs + 1)) % n_s;
    const std::size_t run = task % (runs + 1);
    const auto& fn = lookup_function(cfg.sweep_functions[fi], cfg.data.lo.size());
    const LatticeSpec spec = cfg.lattice_for(cfg.uniform_sticks(cfg.sweep_sticks[si]), fn.output_dim);
    if (run == runs) return approximation_error(spec, oracle_fit(spec, fn.fn), fn.fn, cfg.quadrature_points);
    SyntheticSpec ds = cfg.data;
    ds.function = cfg.sweep_functions[fi];
    const Dataset data = synthesize(ds, derive_seed(cfg.seed, tag::data, fi, run));
    try {
      const TrainReport r = train(spec, cfg.physics, data, schedule, derive_seed(cfg.seed, fi, si, tag::trajectory, run));
      return approximation_error(spec, r.final_state, fn.fn, cfg.quadrature_points);
    } catch (const NumericError&) {
      return kNaN;
    }
  });
  std::vector<ErrorRow> rows;
  for (std::size_t fi = 0; fi < n_f; ++fi)
    for (std::size_t si = 0; si < n_s; ++si) {
      ErrorRow row;
      row.function = cfg.sweep_functions[fi];
      row.sticks = cfg.sweep_sticks[si];
      const std::size_t base = (fi * n_s + si) * (runs + 1);
      row.e_oracle = values[base + runs];
      if (runs > 0) {
        std::vector<double> trained;
        for (std::size_t r = 0; r < runs; ++r)
          if (std::isfinite(values[base + r])) trained.push_back(values[base + r]);
        if (trained.size() < runs) ++result.failed_points;
        if (!trained.empty()) {
          row.e_trained_mean = stats::mean(trained);
          row.e_trained_std = trained.size() > 1 ? stats::stddev(trained) : 0.0;
        }
      }
      rows.push_back(row);
    }
  result.total_points = rows.size();
  {
    auto out = detail::open_output(ctx, result, "error_scaling.csv");
    csv::Writer w(out);
    w.header({"f", "N_s", "E_oracle", "E_trained_mean", "E_trained_std"});
    for (const auto& r : rows) w.row(r.function, r.sticks, r.e_oracle, r.e_trained_mean, r.e_trained_std);
  }
  {
    auto out = detail::open_output(ctx, result, "error_scaling_slopes.csv");
    csv::Writer w(out);
    w.header({"f", "path", "slope", "intercept", "r2", "slope_rms"});
    for (const auto& s : error_slopes(rows, cfg.sweep_functions))
      w.row(s.function, s.path, s.fit.slope, s.fit.intercept, s.fit.r2, 0.5 * s.fit.slope);
  }
  if (rows_out) *rows_out = std::move(rows);
  return result;
}

// ---------------------------------------------------------------------------------------------
// Entropy production of the relaxing system

struct EntropySample {
  double t = 0.0;
  double production = 0.0;
  double flux = 0.0;
  double entropy = 0.0;
  double potential = 0.0;
  double kinetic = 0.0;
};

struct EntropySeries {
  double gamma = 0.0;
  double k = 0.0;
  std::vector<EntropySample> samples;
  double peak = kNaN;
  double final_value = kNaN;
  double minimum = kNaN;
  double transient_spearman = kNaN;
  std::size_t transient_points = 0;
};

/// Samples from the production peak until Π first drops below 1e-3 of it.
inline void summarize_entropy(EntropySeries& s) {
  if (s.samples.empty()) return;
  std::size_t peak = 0;
  s.minimum = s.samples[0].production;
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    if (s.samples[i].production > s.samples[peak].production) peak = i;
    s.minimum = std::min(s.minimum, s.samples[i].production);
  }
  s.peak = s.samples[peak].production;
  s.final_value = s.samples.back().production;
  std::vector<double> pi, u;
  for (std::size_t i = peak; i < s.samples.size(); ++i) {
    pi.push_back(s.samples[i].production);
    u.push_back(s.samples[i].potential);
    if (s.samples[i].production < 1e-3 * s.peak) break;
  }
  s.transient_points = pi.size();
  if (pi.size() >= 3) s.transient_spearman = stats::spearman(pi, u);
}

inline EntropySeries entropy_series(const ExperimentConfig& cfg, const Dataset& data, const LatticeSpec& spec,
                                    double gamma, double k) {
  PhysicsParams p = cfg.physics;
  p.friction = gamma;
  p.stiffness = k;
  const MassMatrix mass = assemble_mass(spec, p);
  const StiffnessOperator op = assemble_stiffness(spec, p, full_batch(spec, data));
  const LinearSDE sde = assemble_sde(spec, p, op, mass);
  const Eigen::Index n = sde.dof();
  MomentState m{Vector::Zero(sde.size()), cfg.entropy_cov0 * Matrix::Identity(sde.size(), sde.size())};
  m.mean.head(n).setConstant(cfg.entropy_x0);

  EntropySeries s;
  s.gamma = gamma;
  s.k = k;
  const auto steps = static_cast<std::size_t>(std::ceil(cfg.entropy_t_end / cfg.dt - 1e-9));
  auto record = [&](std::size_t step) {
    const EntropyRates r = entropy_rates(sde, m);
    s.samples.push_back({static_cast<double>(step) * cfg.dt, r.production, r.flux, gaussian_entropy(m),
                         mean_potential_energy(op, spec.outputs(), m), mean_kinetic_energy(mass, spec.outputs(), m)});
  };
  record(0);
  for (std::size_t step = 1; step <= steps; ++step) {
    m = propagate_moments(sde, m, cfg.dt);
    if (step % cfg.entropy_record_every == 0 || step == steps) record(step);
  }
  summarize_entropy(s);
  return s;
}

inline void write_entropy_series(std::ostream& os, const EntropySeries& s) {
  csv::Writer w(os);
  w.header({"t", "Pi", "Phi", "S_gauss", "U_mean", "K_mean"});
  for (const auto& x : s.samples) w.row(x.t, x.production, x.flux, x.entropy, x.potential, x.kinetic);
}

inline RunResult run_entropy(const ExperimentConfig& cfg, const RunContext& ctx,
                             std::vector<EntropySeries>* series_out = nullptr) {
  RunResult result;
  const Dataset data = load_dataset(cfg);
  const LatticeSpec spec = cfg.lattice_for(cfg.sticks, data.output_dim());
  const std::size_t nk = cfg.sweep_k.size();
  auto series = parallel_map(cfg.sweep_gamma.size() * nk, ctx.jobs, [&](std::size_t i) {
    return entropy_series(cfg, data, spec, cfg.sweep_gamma[i / nk], cfg.sweep_k[i % nk]);
  });
  std::vector<std::string> files;
  for (const auto& s : series) {
    const std::string name = "entropy_gamma" + detail::fmt_tag(s.gamma) + "_k" + detail::fmt_tag(s.k) + ".csv";
    auto out = detail::open_output(ctx, result, name);
    write_entropy_series(out, s);
    files.push_back(name);
  }
  {
    auto out = detail::open_output(ctx, result, "entropy_summary.csv");
    csv::Writer w(out);
    w.header({"gamma", "k", "Pi_peak", "Pi_final", "Pi_min", "spearman_transient", "transient_points", "file"});
    for (std::size_t i = 0; i < series.size(); ++i)
      w.row(series[i].gamma, series[i].k, series[i].peak, series[i].final_value, series[i].minimum,
            series[i].transient_spearman, series[i].transient_points, files[i]);
  }
  {
    auto out = detail::open_output(ctx, result, "dataset.csv");
    write_dataset(out, data);
  }
  result.total_points = series.size();
  if (series_out) *series_out = std::move(series);
  return result;
}

// ---------------------------------------------------------------------------------------------
// Single fit, optionally against the MLP baselines

struct FitOutcome {
  TrainReport ss;
  double oracle_loss = kNaN;
  bool has_mlp = false;
  MlpReport mlp;
  MlpReport mlpf;
};

inline RunResult run_fit(const ExperimentConfig& cfg, const RunContext& ctx, FitOutcome* outcome_out = nullptr) {
  RunResult result;
  const Dataset data = load_dataset(cfg);
  const LatticeSpec spec = cfg.lattice_for(cfg.sticks, data.output_dim());
  const TrainSchedule schedule = cfg.train_schedule();
  FitOutcome fit;
  fit.oracle_loss = mse_loss(spec, least_squares_fit(spec, data), data);

  // Slot 0 is the SS system, 1 and 2 the networks; all share the batch schedule seed.
  MlpOptions opt;
  opt.lr = cfg.mlp_lr;
  opt.epochs = cfg.mlp_epochs ? cfg.mlp_epochs : cfg.schedule.epochs;
  opt.batch_size = cfg.schedule.batch_size;
  opt.seed = schedule.seed;
  const std::size_t tasks = cfg.mlp_enabled ? 3 : 1;
  std::vector<MlpReport> nets(2);
  parallel_map(tasks, ctx.jobs, [&](std::size_t i) {
    if (i == 0) fit.ss = train(spec, cfg.physics, data, schedule);
    else
      nets[i - 1] = mlp_train(mlp_init(data.input_dim(), data.output_dim(), cfg.mlp_hidden, i == 1,
                                       derive_seed(cfg.seed, i == 1 ? tag::mlp : tag::mlpf)),
                              data, opt);
    return 0;
  });
  result.total_points = tasks;
  {
    auto out = detail::open_output(ctx, result, "dataset.csv");
    write_dataset(out, data);
  }
  {
    auto out = detail::open_output(ctx, result, "ss_train.csv");
    write_train_report(out, fit.ss);
  }
  {
    auto out = detail::open_output(ctx, result, "ss_summary.csv");
    write_train_summary(out, fit.ss);
  }
  {
    auto out = detail::open_output(ctx, result, "ss_state.csv");
    csv::write_state(out, spec, fit.ss.final_state);
  }
  if (cfg.mlp_enabled) {
    fit.has_mlp = true;
    fit.mlp = std::move(nets[0]);
    fit.mlpf = std::move(nets[1]);
    auto out = detail::open_output(ctx, result, "mlp_train.csv");
    write_mlp_report(out, fit.mlp);
    auto outf = detail::open_output(ctx, result, "mlpf_train.csv");
    write_mlp_report(outf, fit.mlpf);
  }
  {
    auto out = detail::open_output(ctx, result, "fit_summary.csv");
    csv::Writer w(out);
    w.header({"model", "final_loss", "steady_loss_mean", "oracle_loss", "diverged"});
    w.row(std::string("ss"), fit.ss.loss.back(), fit.ss.steady_loss_mean, fit.oracle_loss, 0);
    if (fit.has_mlp) {
      w.row(std::string("mlp"), fit.mlp.loss.back(), kNaN, fit.oracle_loss, fit.mlp.diverged ? 1 : 0);
      w.row(std::string("mlpf"), fit.mlpf.loss.back(), kNaN, fit.oracle_loss, fit.mlpf.diverged ? 1 : 0);
    }
  }
  if (outcome_out) *outcome_out = std::move(fit);
  return result;
}

/// Dispatches by experiment id, times the run and writes the manifest.
inline RunResult run_experiment(const ExperimentConfig& cfg, const RunContext& ctx) {
  const auto started = std::chrono::steady_clock::now();
  RunResult r;
  if (cfg.experiment == "fit") r = run_fit(cfg, ctx);
  else if (cfg.experiment == "scale-sweep") r = run_scale_sweep(cfg, ctx);
  else if (cfg.experiment == "tlb-expressivity") r = run_tlb_expressivity(cfg, ctx);
  else if (cfg.experiment == "tlb-heatmap") r = run_tlb_heatmap(cfg, ctx);
  else if (cfg.experiment == "error-scaling") r = run_error_scaling(cfg, ctx);
  else if (cfg.experiment == "entropy") r = run_entropy(cfg, ctx);
  else throw ConfigError("unknown experiment '" + cfg.experiment + "'", "experiment");
  write_manifest(ctx, cfg, r, std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
  return r;
}

}  // namespace ss
