#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ss/experiments.hpp"

using namespace ss;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ss_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunContext context(const fs::path& dir, std::size_t jobs = 1) {
  RunContext ctx;
  ctx.out_dir = dir;
  ctx.jobs = jobs;
  ctx.version = "test";
  return ctx;
}

const char* kSmallSweep =
    "n_trajectories = 6\n"
    "data.n_points = 12\n"
    "physics.friction = 0.5\n"
    "physics.temperature = 0.5\n"
    "physics.mass_equals_stiffness = true\n"
    "schedule.epochs = 60\n"
    "schedule.batch_size = 4\n"
    "schedule.steady_window = 10\n"
    "jarzynski.n_boot = 50\n"
    "sweep.k = log:1e-2:1e1:4\n";

ScalePoint point(double k, double df, double loss = 1.0) {
  ScalePoint p;
  p.k = k;
  p.delta_f = df;
  p.delta_f_std = 0.1;
  p.loss_mean = loss;
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("worker pool keeps results by index and rethrows the first failure") {
  for (std::size_t jobs : {1u, 2u, 7u}) {
    const auto out = parallel_map(50, jobs, [](std::size_t i) { return static_cast<int>(i * i); });
    REQUIRE(out.size() == 50);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i * i));
  }
  try {
    parallel_map(20, 4, [](std::size_t i) -> int {
      if (i == 5 || i == 13) throw std::runtime_error("task " + std::to_string(i));
      return 0;
    });
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "task 5");
  }
  CHECK(parallel_map(0, 3, [](std::size_t) { return 1; }).empty());
}

TEST_CASE("plateau extraction") {
  // flat bottom then growth
  std::vector<ScalePoint> pts;
  const double values[] = {1.0, 1.02, 0.98, 1.01, 1.0, 1.5, 3.0, 8.0};
  for (int i = 0; i < 8; ++i) pts.push_back(point(std::pow(10.0, -3 + 0.5 * i), values[i], 100.0 / (i + 1)));
  const Plateau p = extract_plateau(pts, 0.05);
  CHECK(p.found);
  CHECK(p.n_points == 5);
  CHECK(p.delta_f_min == Approx(1.0));
  CHECK(p.k_lo == Approx(1e-3));
  CHECK(p.k_hi == Approx(1e-1));
  CHECK(p.sigma == Approx(0.1));

  // input order does not matter; failed points are skipped
  std::vector<ScalePoint> shuffled(pts.rbegin(), pts.rend());
  shuffled.push_back(point(1e-4, kNaN));
  shuffled.back().status = "numeric_failure";
  const Plateau q = extract_plateau(shuffled, 0.05);
  CHECK(q.n_points == p.n_points);
  CHECK(q.delta_f_min == p.delta_f_min);

  std::vector<ScalePoint> rising;
  for (int i = 0; i < 6; ++i) rising.push_back(point(std::pow(10.0, i - 3.0), std::pow(2.0, i)));
  const Plateau none = extract_plateau(rising, 0.05);
  CHECK(!none.found);
  CHECK(none.delta_f_min == 1.0);

  const ScaleShape shape = scale_shape(pts);
  CHECK(shape.bottom_points == 5);
  CHECK(shape.bottom_relative_slope < 0.05);
  CHECK(shape.loss_ratio == Approx(8.0));
  CHECK(extract_plateau({}, 0.05).n_points == 0);
}

TEST_CASE("expressivity and heatmap fits") {
  std::vector<ExpressivityRow> rows;
  for (std::size_t n : {1u, 2u, 4u, 8u}) {
    ExpressivityRow r;
    r.sticks = n;
    r.plateau.delta_f_min = 0.3 * static_cast<double>(n);
    rows.push_back(r);
  }
  const PowerLaw law = expressivity_fit(rows);
  CHECK(law.exponent == Approx(1.0));
  CHECK(law.r2 == Approx(1.0));
  CHECK(law.mean_doubling_ratio == Approx(2.0));

  std::vector<HeatmapCell> cells;
  for (double g : {0.5, 1.0, 2.0})
    for (double t : {0.1, 1.0}) {
      HeatmapCell c;
      c.gamma = g;
      c.temperature = t;
      c.plateau.delta_f_min = 3.0 * g * t;
      cells.push_back(c);
    }
  const OriginFit fit = heatmap_fit(cells, 1.0);
  CHECK(fit.slope == Approx(3.0));
  CHECK(fit.r2 == Approx(1.0));
}

TEST_CASE("scale sweep output is identical for any worker count") {
  const ExperimentConfig cfg = parse_config_text(kSmallSweep, "scale-sweep");
  const fs::path a = scratch("sweep_a"), b = scratch("sweep_b");
  const RunResult ra = run_experiment(cfg, context(a, 1));
  const RunResult rb = run_experiment(cfg, context(b, 3));
  CHECK(ra.outputs == rb.outputs);
  for (const auto& name : ra.outputs) CHECK(slurp(a / name) == slurp(b / name));
  CHECK(ra.total_points == 4);

  const csv::Table t = csv::read_file((a / "scale_sweep.csv").string());
  CHECK(t.header == std::vector<std::string>{"k", "M", "loss_mean", "loss_std", "deltaF", "deltaF_lo", "deltaF_hi",
                                             "deltaF_std", "mean_W", "n_ok", "inner_steps", "status"});
  REQUIRE(t.rows.size() == 4);
  for (const auto& row : t.rows) CHECK(row[0] == row[1]);  // M = k
}

TEST_CASE("re-running with the same seed reproduces every CSV byte for byte") {
  const std::string text =
      "data.function = bump_xy\ndata.lo = 0 0\ndata.hi = 1 1\ndata.n_points = 40\nlattice.sticks = 3\n"
      "physics.friction = 5\nphysics.temperature = 1e-3\nschedule.epochs = 80\nschedule.batch_size = 8\n"
      "mlp.enabled = true\nmlp.epochs = 200\n";
  const ExperimentConfig cfg = parse_config_text(text, "fit");
  const fs::path a = scratch("fit_a"), b = scratch("fit_b");
  const RunResult ra = run_experiment(cfg, context(a, 1));
  run_experiment(cfg, context(b, 3));
  for (const auto& name : ra.outputs) CHECK(slurp(a / name) == slurp(b / name));
  for (const char* f : {"dataset.csv", "ss_train.csv", "ss_summary.csv", "ss_state.csv", "mlp_train.csv",
                        "mlpf_train.csv", "fit_summary.csv"})
    CHECK(fs::exists(a / f));
  CHECK(csv::read_file((a / "ss_train.csv").string()).header ==
        std::vector<std::string>{"epoch", "loss", "U", "K", "W_acc"});

  KeyValues kv = cfg.source;
  kv.set("seed", "7");
  const fs::path c = scratch("fit_c");
  run_experiment(parse_config(kv, "fit"), context(c));
  CHECK(slurp(a / "ss_train.csv") != slurp(c / "ss_train.csv"));
}

TEST_CASE("manifest carries what a re-run needs") {
  KeyValues kv = KeyValues::parse(kSmallSweep);
  kv.set("seed", "1234");
  const ExperimentConfig cfg = parse_config(kv, "scale-sweep");
  const fs::path dir = scratch("manifest");
  run_experiment(cfg, context(dir));
  const std::string m = slurp(dir / "manifest.txt");
  CHECK(m.find("experiment = scale-sweep") != std::string::npos);
  CHECK(m.find("seed = 1234") != std::string::npos);
  CHECK(m.find("version = test") != std::string::npos);
  CHECK(m.find("wall_seconds = ") != std::string::npos);
  CHECK(m.find("output = scale_sweep.csv") != std::string::npos);
  CHECK(m.find("sweep.k = log:1e-2:1e1:4") != std::string::npos);

  const ExperimentConfig again = parse_config_text(slurp(dir / "config.ini"), "scale-sweep");
  const fs::path rerun = scratch("manifest_rerun");
  run_experiment(again, context(rerun));
  CHECK(slurp(dir / "scale_sweep.csv") == slurp(rerun / "scale_sweep.csv"));
}

TEST_CASE("error scaling: piecewise-linear targets sit at the quadrature floor") {
  const ExperimentConfig cfg = parse_config_text(
      "data.lo = 0\ndata.hi = 1\nsweep.functions = linear_x, square_x\nsweep.sticks = 2, 4, 8\n", "error-scaling");
  std::vector<ErrorRow> rows;
  const fs::path dir = scratch("error");
  run_error_scaling(cfg, context(dir), &rows);
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) {
    if (r.function == "linear_x") CHECK(r.e_oracle < 1e-20);
    else CHECK(r.e_oracle == Approx(1.0 / (30.0 * std::pow(static_cast<double>(r.sticks), 4))).epsilon(1e-9));
    CHECK(std::isnan(r.e_trained_mean));
  }
  CHECK(fs::exists(dir / "error_scaling_slopes.csv"));
}

TEST_CASE("entropy driver writes one series per setting") {
  const ExperimentConfig cfg = parse_config_text(
      "data.function = zero\ndata.lo = 0\ndata.hi = 1\ndata.n_points = 10\ndata.noise_sigma = 0.1\n"
      "schedule.batch_size = 10\nphysics.temperature = 1e-2\nintegration.dt = 5e-3\nentropy.t_end = 20\n"
      "entropy.cov0 = 1e-2\nsweep.gamma = 10, 20\nsweep.k = 1\n",
      "entropy");
  std::vector<EntropySeries> series;
  const fs::path dir = scratch("entropy");
  run_entropy(cfg, context(dir), &series);
  REQUIRE(series.size() == 2);
  for (const auto& s : series) {
    CHECK(s.samples.size() == 401);
    CHECK(s.minimum >= -1e-9 * s.peak);
  }
  CHECK(fs::exists(dir / "entropy_gamma10_k1.csv"));
  CHECK(csv::read_file((dir / "entropy_gamma20_k1.csv").string()).header ==
        std::vector<std::string>{"t", "Pi", "Phi", "S_gauss", "U_mean", "K_mean"});
}

TEST_CASE("CLI exit codes") {
  const fs::path dir = scratch("cli");
  {
    std::ofstream(dir / "bad.ini") << "physics.fricton = 1\n";
    std::ofstream(dir / "ok.ini") << "data.n_points = 8\nschedule.batch_size = 4\nschedule.epochs = 10\n";
    std::ofstream(dir / "blowup.ini") << "integration.mode = coarse\nphysics.stiffness = 1e6\nphysics.friction = 0\n"
                                         "schedule.dt_epoch = 1\nschedule.epochs = 200\n";
  }
  const std::string out = " --out " + (dir / "out").string();
  CHECK(run_cli("fit --config " + (dir / "ok.ini").string() + out) == 0);
  CHECK(fs::exists(dir / "out" / "manifest.txt"));
  CHECK(run_cli("fit --config " + (dir / "bad.ini").string() + out) == 2);
  CHECK(run_cli("fit --config " + (dir / "missing.ini").string() + out) == 2);
  CHECK(run_cli("fit" + out) == 2);
  CHECK(run_cli("nonsense --config x") == 2);
  CHECK(run_cli("fit --config " + (dir / "ok.ini").string() + " --jobs 0") == 2);
  CHECK(run_cli("entropy --config " + (dir / "ok.ini").string() + out) == 2);
  CHECK(run_cli("fit --config " + (dir / "blowup.ini").string() + out) == 3);
}
