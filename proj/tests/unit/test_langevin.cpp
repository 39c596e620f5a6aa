#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ss/langevin.hpp"
#include "ss/stats.hpp"

using namespace ss;
using Catch::Approx;

namespace {

double total_energy(const LinearSDE& sde, const MassMatrix& mass, const StiffnessOperator& op, const Vector& z) {
  const GridState s = unpack(z, sde.nodes, sde.outputs);
  return kinetic_energy(mass, s) + op.energy(s.x);
}

}  // namespace

TEST_CASE("pack and unpack are inverse") {
  const LatticeSpec spec({3, 2}, {0, 0}, {1, 1}, 2);
  GridState s = GridState::zeros(spec);
  for (Eigen::Index i = 0; i < s.x.size(); ++i) {
    s.x.data()[i] = static_cast<double>(i);
    s.v.data()[i] = -static_cast<double>(i);
  }
  const Vector z = pack(s);
  CHECK(z(3) == s.x(1, 1));
  CHECK(z(12 + 3) == s.v(1, 1));
  const GridState back = unpack(z, spec.node_count(), spec.outputs());
  CHECK(back.x == s.x);
  CHECK(back.v == s.v);
}

TEST_CASE("SDE block structure") {
  const LatticeSpec spec({3}, {0.0}, {1.0}, 2);
  PhysicsParams params;
  params.stiffness = 0.0;
  params.friction = 0.7;
  params.temperature = 1.0;
  const MassMatrix mass = assemble_mass(spec, params);
  Matrix y(2, 2);
  y << 1, 2, 3, 4;
  const SpringBatch batch = SpringBatch::make(spec, {{0.3}, {1.6}}, y);

  const LinearSDE free = assemble_sde(spec, params, batch, mass);
  const Eigen::Index n = free.dof();
  CHECK(n == 6);
  CHECK(free.A.topLeftCorner(n, n).isZero(0.0));
  CHECK(free.A.topRightCorner(n, n).isIdentity(0.0));
  CHECK(free.A.bottomLeftCorner(n, n).isZero(0.0));
  CHECK(free.A.bottomRightCorner(n, n).isApprox(-0.7 * Matrix::Identity(n, n)));
  CHECK(free.b.isZero(0.0));
  CHECK(free.B.topRows(n).isZero(0.0));
  CHECK(!free.B.bottomRightCorner(n, n).isZero(0.0));

  params.stiffness = 2.0;
  const LinearSDE sde = assemble_sde(spec, params, batch, mass);
  const StiffnessOperator op = assemble_stiffness(spec, params, batch);
  const Matrix expected = -expand_outputs(mass.inverse() * op.K, 2);
  CHECK((sde.A.bottomLeftCorner(n, n) - expected).norm() < 1e-12);
  // b is M⁻¹c: M times the velocity part of b recovers c.
  Matrix bv(3, 2);
  for (Eigen::Index a = 0; a < 3; ++a)
    for (Eigen::Index p = 0; p < 2; ++p) bv(a, p) = sde.b(n + a * 2 + p);
  CHECK((mass.matrix * bv - op.c).norm() < 1e-12);

  // Mass-consistent noise: the velocity diffusion block is γ k_b T M⁻¹ per output.
  const Matrix dvv = sde.diffusion().bottomRightCorner(n, n);
  CHECK((dvv - 0.7 * expand_outputs(mass.inverse(), 2)).norm() < 1e-12);

  params.noise = NoiseModel::Diagonal;
  const LinearSDE diag = assemble_sde(spec, params, batch, mass);
  CHECK(diag.B.bottomRightCorner(n, n).isApprox(params.sigma() * Matrix::Identity(n, n)));

  params.friction = 0.0;
  params.temperature = 0.0;
  CHECK(assemble_sde(spec, params, batch, mass).B.isZero(0.0));
}

TEST_CASE("single-dof rig") {
  PhysicsParams p;
  p.mass = 2.0;
  p.stiffness = 3.0;
  p.friction = 0.5;
  p.temperature = 1.0;
  const LinearSDE sde = single_dof_sde(p);
  CHECK(sde.A(0, 0) == 0.0);
  CHECK(sde.A(0, 1) == 1.0);
  CHECK(sde.A(1, 0) == Approx(-1.5));
  CHECK(sde.A(1, 1) == Approx(-0.5));
  CHECK(sde.B(1, 1) == Approx(std::sqrt(2.0 * 0.5 * 1.0 / 2.0)));
}

TEST_CASE("Euler-Maruyama step examples") {
  LinearSDE zero{Matrix::Zero(2, 2), Vector::Zero(2), Matrix::Zero(2, 2), 1, 1, 0.0};
  Vector z(2);
  z << 0.3, -1.2;
  CHECK(em_step(zero, z, 0.1, Vector::Zero(2)) == z);

  const double gamma = 0.8, sigma = 1.3, dt = 0.01;
  LinearSDE ou{Matrix::Zero(2, 2), Vector::Zero(2), Matrix::Zero(2, 2), 1, 1, gamma};
  ou.A(1, 1) = -gamma;
  ou.B(1, 1) = sigma;
  Vector noise(2);
  noise << 0.0, 0.42;
  const Vector next = em_step(ou, z, dt, noise);
  CHECK(next(1) == Approx(z(1) * (1 - gamma * dt) + sigma * std::sqrt(dt) * 0.42));
  CHECK(next(0) == z(0));
}

TEST_CASE("stepper replays a reference loop with recorded noise") {
  const LatticeSpec spec({3}, {0.0}, {1.0});
  PhysicsParams p;
  p.friction = 0.4;
  p.temperature = 0.3;
  const MassMatrix mass = assemble_mass(spec, p);
  Matrix y(1, 1);
  y << 0.5;
  const LinearSDE sde = assemble_sde(spec, p, SpringBatch::make(spec, {{0.7}}, y), mass);
  Vector z0 = Vector::LinSpaced(sde.size(), -1.0, 1.0);

  Rng rng(99);
  EulerMaruyama em(sde, 0.01);
  Vector z = z0;
  em.step(z, rng);
  em.step(z, rng);

  Rng replay(99);
  Vector ref = z0;
  for (int s = 0; s < 2; ++s) {
    Vector noise = Vector::Zero(sde.size());
    for (Eigen::Index i = 0; i < sde.dof(); ++i) noise(sde.dof() + i) = replay.normal();
    ref = em_step(sde, ref, 0.01, noise);
  }
  CHECK((z - ref).norm() < 1e-14);
}

TEST_CASE("integrate records the initial state and replays bit-exactly") {
  PhysicsParams p;
  p.temperature = 1.0;
  const LinearSDE sde = single_dof_sde(p);
  Vector z0(2);
  z0 << 1.0, 0.0;
  SdeRun run;
  run.n_steps = 0;
  run.keep_states = true;
  const TrajectoryLog empty = integrate(sde, z0, run);
  REQUIRE(empty.states.size() == 1);
  CHECK(empty.states[0] == z0);

  run.n_steps = 1000;
  run.record_every = 100;
  run.seed = 7;
  const TrajectoryLog a = integrate(sde, z0, run);
  const TrajectoryLog b = integrate(sde, z0, run);
  CHECK(a.final_state == b.final_state);
  CHECK(a.states == b.states);
  CHECK(a.steps.size() == 11);
  run.seed = 8;
  CHECK(integrate(sde, z0, run).final_state != a.final_state);
}

TEST_CASE("observer sees each recorded sample") {
  PhysicsParams p;
  const LinearSDE sde = single_dof_sde(p);
  SdeRun run;
  run.n_steps = 25;
  run.record_every = 10;
  std::vector<std::size_t> seen;
  integrate(sde, Vector::Ones(2), run, {[&](std::size_t step, double, const Vector&) { seen.push_back(step); }});
  CHECK(seen == std::vector<std::size_t>{0, 10, 20, 25});
}

TEST_CASE("unstable step surfaces as an integration blowup") {
  PhysicsParams p;
  p.stiffness = 1e6;
  p.friction = 0.0;
  const LinearSDE sde = single_dof_sde(p);
  SdeRun run;
  run.dt = 1.0;
  run.n_steps = 2000;
  CHECK_THROWS_AS(integrate(sde, Vector::Ones(2), run), IntegrationBlowup);
}

TEST_CASE("stability guard") {
  const LatticeSpec spec({2}, {0.0}, {1.0});
  PhysicsParams p;
  p.friction = 2.0;
  const MassMatrix mass = assemble_mass(spec, p);
  CHECK(stable_dt(mass, Matrix::Zero(2, 2), 2.0) == Approx(0.05));
  Matrix k = Matrix::Identity(2, 2) * 100.0;
  // λ_min(M) = M/6 for one stick
  CHECK(stable_dt(mass, k, 2.0) == Approx(0.1 * std::sqrt((1.0 / 6.0) / 100.0)));
}

TEST_CASE("single-dof stationary variances obey equipartition") {
  PhysicsParams p;
  p.mass = 1.0;
  p.stiffness = 2.0;
  p.friction = 1.0;
  p.temperature = 0.5;
  const LinearSDE sde = single_dof_sde(p);
  const std::size_t n_traj = 1000;
  std::vector<double> xs, vs;
  for (std::size_t t = 0; t < n_traj; ++t) {
    Rng rng(derive_seed(123, t));
    EulerMaruyama em(sde, 0.01);
    Vector z = Vector::Zero(2);
    for (int s = 0; s < 1500; ++s) em.step(z, rng);
    xs.push_back(z(0));
    vs.push_back(z(1));
  }
  CHECK(stats::variance(xs) == Approx(p.thermal_energy() / p.stiffness).epsilon(0.1));
  CHECK(stats::variance(vs) == Approx(p.thermal_energy() / p.mass).epsilon(0.1));
}

TEST_CASE("free Brownian position variance grows linearly") {
  PhysicsParams p;
  p.stiffness = 0.0;
  p.friction = 2.0;
  p.temperature = 1.0;
  const LinearSDE sde = single_dof_sde(p);
  const std::size_t n_traj = 400, n_rec = 20, every = 100;
  std::vector<std::vector<double>> samples(n_rec);
  for (std::size_t t = 0; t < n_traj; ++t) {
    Rng rng(derive_seed(5, t));
    EulerMaruyama em(sde, 0.01);
    Vector z = Vector::Zero(2);
    for (std::size_t r = 0; r < n_rec; ++r) {
      for (std::size_t s = 0; s < every; ++s) em.step(z, rng);
      samples[r].push_back(z(0));
    }
  }
  std::vector<double> times, vars;
  for (std::size_t r = 0; r < n_rec; ++r) {
    times.push_back(static_cast<double>((r + 1) * every) * 0.01);
    vars.push_back(stats::variance(samples[r]));
  }
  const auto fit = stats::linear_fit(times, vars);
  CHECK(fit.r2 > 0.95);
  // long-time diffusion constant k_bT/(Mγ) ⇒ slope 2 k_bT/(Mγ) = 1
  CHECK(fit.slope == Approx(1.0).epsilon(0.2));
}

TEST_CASE("zero temperature: damped energy is non-increasing") {
  const LatticeSpec spec({4}, {0.0}, {1.0});
  PhysicsParams p;
  p.friction = 0.5;
  p.stiffness = 3.0;
  const MassMatrix mass = assemble_mass(spec, p);
  Matrix y(3, 1);
  y << 1.0, -1.0, 0.5;
  const SpringBatch batch = SpringBatch::make(spec, {{0.2}, {1.5}, {2.9}}, y);
  const StiffnessOperator op = assemble_stiffness(spec, p, batch);
  const LinearSDE sde = assemble_sde(spec, p, op, mass);
  Vector z = Vector::Zero(sde.size());
  z(1) = 2.0;
  Rng rng(1);
  EulerMaruyama em(sde, 1e-4);
  const double e0 = total_energy(sde, mass, op, z);
  double prev = e0;
  for (int r = 0; r < 200; ++r) {
    for (int s = 0; s < 100; ++s) em.step(z, rng);
    const double e = total_energy(sde, mass, op, z);
    CHECK(e - prev < 1e-3 * e0);
    prev = e;
  }
  CHECK(prev < 0.5 * e0);
}

TEST_CASE("conservative limit: energy drift shrinks with the step") {
  const LatticeSpec spec({3}, {0.0}, {1.0});
  PhysicsParams p;
  p.friction = 0.0;
  p.stiffness = 1.0;
  const MassMatrix mass = assemble_mass(spec, p);
  Matrix y(2, 1);
  y << 0.4, -0.3;
  const StiffnessOperator op = assemble_stiffness(spec, p, SpringBatch::make(spec, {{0.5}, {1.5}}, y));
  const LinearSDE sde = assemble_sde(spec, p, op, mass);
  auto drift = [&](double dt) {
    Vector z = Vector::Zero(sde.size());
    z(sde.dof()) = 1.0;
    Rng rng(1);
    EulerMaruyama em(sde, dt);
    const double e0 = total_energy(sde, mass, op, z);
    for (int s = 0; s < 10000; ++s) em.step(z, rng);
    return std::abs(total_energy(sde, mass, op, z) - e0) / e0;
  };
  const double d1 = drift(1e-3), d2 = drift(5e-4);
  CHECK(d1 < 0.5);
  CHECK(d2 <= 0.5 * d1);
}
