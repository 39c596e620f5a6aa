#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <vector>

#include "ss/training.hpp"

using namespace ss;
using Catch::Approx;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Dataset make_data(const std::string& fn, std::vector<double> lo, std::vector<double> hi, std::size_t n,
                  double noise = 0.0, std::uint64_t seed = 42) {
  SyntheticSpec s;
  s.function = fn;
  s.lo = std::move(lo);
  s.hi = std::move(hi);
  s.n_points = n;
  s.noise_sigma = noise;
  return synthesize(s, seed);
}

}  // namespace

TEST_CASE("synthetic datasets") {
  const Dataset zero = make_data("zero", {0.0}, {1.0}, 15);
  CHECK(zero.targets.isZero(0.0));
  CHECK(zero.size() == 15);

  const Dataset c = make_data("cos_x", {0.0}, {kTwoPi}, 20);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(c.targets(static_cast<Eigen::Index>(i), 0) == std::cos(c.inputs(static_cast<Eigen::Index>(i), 0)));
    CHECK(c.inputs(static_cast<Eigen::Index>(i), 0) >= 0.0);
    CHECK(c.inputs(static_cast<Eigen::Index>(i), 0) <= kTwoPi);
  }

  const double pi = std::numbers::pi;
  const Dataset q = make_data("quadratic_xy2", {-pi, -pi}, {pi, pi}, 80);
  CHECK(q.size() == 80);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double x = q.inputs(static_cast<Eigen::Index>(i), 0), y = q.inputs(static_cast<Eigen::Index>(i), 1);
    CHECK(q.targets(static_cast<Eigen::Index>(i), 0) == Approx(x * x + x * y * y).epsilon(1e-15));
  }

  const Dataset a = make_data("sin_x", {0.0}, {1.0}, 10, 0.1, 5), b = make_data("sin_x", {0.0}, {1.0}, 10, 0.1, 5);
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets == b.targets);
  CHECK(make_data("sin_x", {0.0}, {1.0}, 10, 0.1, 6).inputs != a.inputs);

  CHECK_THROWS_AS(make_data("no_such_fn", {0.0}, {1.0}, 5), ConfigError);
  CHECK_THROWS_AS(make_data("quadratic_xy2", {0.0}, {1.0}, 5), ConfigError);
  CHECK_THROWS_AS(make_data("zero", {1.0}, {1.0}, 5), ConfigError);
}

TEST_CASE("dataset CSV round-trip") {
  const Dataset d = make_data("bump_xy", {0.0, 0.0}, {1.0, 1.0}, 12, 0.01);
  std::stringstream ss;
  write_dataset(ss, d);
  CHECK(ss.str().rfind("u_1,u_2,y_1\n", 0) == 0);
  const Dataset back = read_dataset(ss);
  CHECK(back.inputs == d.inputs);
  CHECK(back.targets == d.targets);
}

TEST_CASE("loss examples") {
  const LatticeSpec spec({4}, {0.0}, {1.0});
  const Dataset d = make_data("sin_x", {0.0}, {3.0}, 25, 0.2);
  GridState s = GridState::zeros(spec);
  Rng rng(8);
  for (Eigen::Index i = 0; i < 4; ++i) s.x(i, 0) = rng.normal();

  double naive = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    const double u = d.inputs(static_cast<Eigen::Index>(j), 0);
    const auto cell = std::min<std::size_t>(static_cast<std::size_t>(u), 2);
    const double lam = u - static_cast<double>(cell);
    const double yhat = (1 - lam) * s.x(static_cast<Eigen::Index>(cell), 0) + lam * s.x(static_cast<Eigen::Index>(cell + 1), 0);
    naive += std::pow(yhat - d.targets(static_cast<Eigen::Index>(j), 0), 2);
  }
  naive /= static_cast<double>(d.size());
  CHECK(mse_loss(spec, s, d) == Approx(naive).epsilon(1e-12));

  PhysicsParams p;
  p.stiffness = 2.7;
  const double u = potential_energy(spec, s, p, full_batch(spec, d));
  CHECK(u / mse_loss(spec, s, d) == Approx(p.stiffness * static_cast<double>(d.size()) / 2.0));

  const Dataset lin = make_data("linear_x", {0.0}, {3.0}, 25);
  const GridState exact = oracle_fit(spec, lookup_function("linear_x", 1).fn);
  CHECK(mse_loss(spec, exact, lin) == Approx(0.0).margin(1e-28));
}

TEST_CASE("batch schedule covers every point once per pass") {
  for (const auto& [n, b] : std::vector<std::pair<std::size_t, std::size_t>>{{20, 16}, {160, 16}, {7, 3}, {5, 5}, {9, 1}}) {
    BatchSchedule sched(n, b, 42);
    const std::size_t per_pass = (n + b - 1) / b;
    CHECK(sched.epochs_per_pass() == per_pass);
    for (int pass = 0; pass < 3; ++pass) {
      std::multiset<std::size_t> seen;
      for (std::size_t e = 0; e < per_pass; ++e) {
        const auto idx = sched.next();
        CHECK(idx.size() == (e + 1 < per_pass ? b : n - b * (per_pass - 1)));
        seen.insert(idx.begin(), idx.end());
      }
      CHECK(seen.size() == n);
      for (std::size_t i = 0; i < n; ++i) CHECK(seen.count(i) == 1);
    }
  }
  BatchSchedule a(30, 4, 9), b(30, 4, 9), c(30, 4, 10);
  bool differs = false;
  for (int e = 0; e < 20; ++e) {
    const auto x = a.next();
    CHECK(x == b.next());
    differs = differs || x != c.next();
  }
  CHECK(differs);
  CHECK_THROWS_AS(BatchSchedule(10, 11, 1), ConfigError);
}

TEST_CASE("steady-state detection") {
  const std::vector<double> flat(100, 3.0);
  const auto s = detect_steady_state(flat, 10, 0.01);
  CHECK(s.found);
  CHECK(s.index == 10);

  std::vector<double> geometric;
  for (int i = 0; i < 200; ++i) geometric.push_back(std::pow(0.9, i));
  const auto g = detect_steady_state(geometric, 10, 0.01);
  CHECK(!g.found);
  CHECK(g.index == geometric.size());

  // exp decay onto a noisy plateau; the knee is where the decay term drops to rel_tol of the plateau
  Rng rng(4);
  std::vector<double> trace;
  const std::size_t window = 25;
  for (int i = 0; i < 600; ++i) trace.push_back(1.0 + 10.0 * std::exp(-i / 20.0) + 0.02 * rng.normal());
  const auto knee = detect_steady_state(trace, window, 0.01);
  CHECK(knee.found);
  const double true_knee = 20.0 * std::log(10.0 / 0.01);
  CHECK(std::abs(static_cast<double>(knee.index) - true_knee) <= static_cast<double>(window));

  CHECK(!detect_steady_state(std::vector<double>{1, 2, 3}, 2, 0.1).found);
}

TEST_CASE("oracle fit and approximation error") {
  const LatticeSpec line({9}, {0.0}, {kTwoPi / 8.0});
  const GridState o = oracle_fit(line, lookup_function("cos_x", 1).fn);
  for (std::size_t n = 0; n < 9; ++n)
    CHECK(o.x(static_cast<Eigen::Index>(n), 0) == std::cos(static_cast<double>(n) * kTwoPi / 8.0));
  CHECK(o.v.isZero(0.0));

  const LatticeSpec sq({3, 4}, {0, 0}, {0.5, 1.0});
  const TargetFn constant = [](std::span<const double>) { return Vector::Constant(1, 2.5); };
  CHECK(oracle_fit(sq, constant).x.isConstant(2.5));
  const auto& plane = lookup_function("plane_xy", 2).fn;
  const GridState po = oracle_fit(sq, plane);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> u{rng.uniform(0, 1), rng.uniform(0, 3)};
    CHECK(interpolate(sq, po, u)(0) == Approx(plane(u)(0)).margin(1e-12));
  }
  CHECK(approximation_error(sq, po, plane) == Approx(0.0).margin(1e-24));

  const LatticeSpec unit({2}, {0.0}, {1.0});
  const auto& square = lookup_function("square_x", 1).fn;
  const GridState so = oracle_fit(unit, square);
  CHECK(approximation_error(unit, so, square, 8) == Approx(1.0 / 30.0).epsilon(1e-12));
  // E for x² on [0, L] with n sticks is L h⁴ / 30
  const LatticeSpec fine({11}, {0.0}, {0.3});
  CHECK(approximation_error(fine, oracle_fit(fine, square), square, 4) == Approx(3.0 * std::pow(0.3, 4) / 30.0).epsilon(1e-10));

  const auto& sine = lookup_function("sin_x", 1).fn;
  const double coarse = approximation_error(line, oracle_fit(line, sine), sine, 3);
  const double refined = approximation_error(line, oracle_fit(line, sine), sine, 10);
  CHECK(coarse == Approx(refined).epsilon(1e-3));
}

TEST_CASE("Gauss-Legendre rules integrate polynomials exactly") {
  for (std::size_t n = 1; n <= 10; ++n) {
    const GaussRule r = gauss_legendre(n);
    for (std::size_t deg = 0; deg < 2 * n; ++deg) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += r.weights[i] * std::pow(r.nodes[i], static_cast<double>(deg));
      CHECK(sum == Approx(1.0 / static_cast<double>(deg + 1)).epsilon(1e-12));
    }
  }
}

TEST_CASE("least-squares grid fit minimizes the loss") {
  const LatticeSpec spec({4, 4}, {0, 0}, {1.0 / 3, 1.0 / 3});
  const Dataset d = make_data("sincos_xy", {0, 0}, {1, 1}, 60, 0.05);
  const GridState best = least_squares_fit(spec, d);
  const double l0 = mse_loss(spec, best, d);
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    GridState p = best;
    for (Eigen::Index i = 0; i < p.x.size(); ++i) p.x.data()[i] += 1e-3 * rng.normal();
    CHECK(mse_loss(spec, p, d) >= l0);
  }
}

TEST_CASE("training without springs shows no systematic loss decrease") {
  const LatticeSpec spec({3}, {0.0}, {0.5});
  const Dataset d = make_data("cos_x", {0.0}, {1.0}, 20);
  PhysicsParams p;
  p.stiffness = 0.0;
  p.friction = 1.0;
  p.temperature = 0.05;
  TrainSchedule sched;
  sched.epochs = 400;
  sched.batch_size = 5;
  sched.auto_substep = true;
  const TrainReport r = train(spec, p, d, sched);
  std::vector<double> epochs(r.loss.size());
  for (std::size_t i = 0; i < epochs.size(); ++i) epochs[i] = static_cast<double>(i);
  const auto fit = stats::linear_fit(epochs, r.loss);
  CHECK(fit.slope > -1.96 * fit.slope_stderr);
  // no springs: the switch work never changes
  CHECK(r.ledger.work == 0.0);
  CHECK(r.ledger.n_switches == 400);
}

TEST_CASE("one stick relaxes onto the least-squares line") {
  const LatticeSpec spec({2}, {0.0}, {1.0});
  const Dataset d = make_data("zero", {0.0}, {1.0}, 20, 0.3, 11);
  PhysicsParams p;
  p.friction = 10.0;
  p.temperature = 1e-4;
  TrainSchedule sched;
  sched.epochs = 3000;
  sched.batch_size = 20;
  sched.auto_substep = true;
  const TrainReport r = train(spec, p, d, sched);
  const GridState best = least_squares_fit(spec, d);
  const double floor = std::sqrt(p.thermal_energy() / p.stiffness);
  CHECK((r.final_state.x - best.x).cwiseAbs().maxCoeff() < 3.0 * floor);
}

TEST_CASE("trained loss respects the grid oracle and replays exactly") {
  const LatticeSpec spec({5}, {0.0}, {kTwoPi / 4});
  const Dataset d = make_data("cos_x", {0.0}, {kTwoPi}, 40, 0.05);
  PhysicsParams p;
  p.friction = 2.0;
  p.temperature = 1e-3;
  TrainSchedule sched;
  sched.epochs = 800;
  sched.batch_size = 8;
  sched.auto_substep = true;
  sched.seed = 3;
  const TrainReport a = train(spec, p, d, sched, 2);
  const TrainReport b = train(spec, p, d, sched, 2);
  CHECK(a.loss == b.loss);
  CHECK(a.work == b.work);
  CHECK(a.final_state.x == b.final_state.x);
  CHECK(train(spec, p, d, sched, 3).loss != a.loss);

  const double oracle = mse_loss(spec, least_squares_fit(spec, d), d);
  CHECK(a.steady_loss_mean >= oracle - 3.0 * a.steady_loss_std);
  CHECK(a.loss.back() < 10.0 * oracle);
  CHECK(a.steady.index <= sched.epochs);
  CHECK(a.inner_steps >= 1);

  std::stringstream csv;
  write_train_report(csv, a);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,loss,U,K,W_acc");
}

TEST_CASE("coarse epochs can blow up and name the epoch") {
  const LatticeSpec spec({3}, {0.0}, {0.5});
  const Dataset d = make_data("cos_x", {0.0}, {1.0}, 20);
  PhysicsParams p;
  p.stiffness = 1e4;
  p.friction = 0.1;
  TrainSchedule sched;
  sched.epochs = 500;
  sched.batch_size = 20;
  sched.dt_epoch = 0.1;
  try {
    train(spec, p, d, sched);
    FAIL("expected a numeric failure");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
  sched.auto_substep = true;
  sched.epochs = 20;
  CHECK_NOTHROW(train(spec, p, d, sched));
}
