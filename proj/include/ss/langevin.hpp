#pragma once

// First-order linear Langevin system dz/dt = A z + b + B ξ(t) and its Euler–Maruyama integrator.
//
// State layout: z = (x, v), each block of length n = ν·m with entry (node, p) at node·m + p.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "ss/error.hpp"
#include "ss/lattice.hpp"
#include "ss/mechanics.hpp"
#include "ss/random.hpp"

namespace ss {

struct LinearSDE {
  Matrix A;  // 2n×2n
  Vector b;  // 2n
  Matrix B;  // 2n×2n, zero on position rows
  std::size_t nodes = 0;
  std::size_t outputs = 0;
  double friction = 0.0;

  Eigen::Index dof() const noexcept { return static_cast<Eigen::Index>(nodes * outputs); }
  Eigen::Index size() const noexcept { return 2 * dof(); }

  /// D = B Bᵀ / 2
  Matrix diffusion() const { return 0.5 * B * B.transpose(); }

  auto velocity_noise() const { return B.bottomRightCorner(dof(), dof()); }
};

struct SdeRun {
  double dt = 1e-3;
  std::size_t n_steps = 1;
  std::uint64_t seed = 42;
  std::size_t record_every = 1;
  bool keep_states = false;

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be > 0", "integration.dt");
    if (record_every < 1) throw ConfigError("record_every must be >= 1", "integration.record_every");
  }
};

inline Vector pack(const GridState& s) {
  const Eigen::Index n = s.x.size();
  Vector z(2 * n);
  for (Eigen::Index a = 0; a < s.x.rows(); ++a)
    for (Eigen::Index p = 0; p < s.x.cols(); ++p) {
      z(a * s.x.cols() + p) = s.x(a, p);
      z(n + a * s.x.cols() + p) = s.v(a, p);
    }
  return z;
}

inline GridState unpack(const Vector& z, std::size_t nodes, std::size_t outputs) {
  const auto nu = static_cast<Eigen::Index>(nodes);
  const auto m = static_cast<Eigen::Index>(outputs);
  GridState s{Matrix(nu, m), Matrix(nu, m)};
  for (Eigen::Index a = 0; a < nu; ++a)
    for (Eigen::Index p = 0; p < m; ++p) {
      s.x(a, p) = z(a * m + p);
      s.v(a, p) = z(nu * m + a * m + p);
    }
  return s;
}

/// Spreads a ν×ν operator over the m output coordinates: (a,p),(b,q) ↦ op(a,b) δ_pq.
inline Matrix expand_outputs(const Matrix& op, std::size_t outputs) {
  const auto m = static_cast<Eigen::Index>(outputs);
  if (m == 1) return op;
  Matrix out = Matrix::Zero(op.rows() * m, op.cols() * m);
  for (Eigen::Index a = 0; a < op.rows(); ++a)
    for (Eigen::Index b = 0; b < op.cols(); ++b)
      for (Eigen::Index p = 0; p < m; ++p) out(a * m + p, b * m + p) = op(a, b);
  return out;
}

/// Builds dx/dt = v, dv/dt = M⁻¹(-K x + c) - γ v + noise for a fixed batch.
inline LinearSDE assemble_sde(const LatticeSpec& spec, const PhysicsParams& params, const StiffnessOperator& op,
                              const MassMatrix& mass) {
  params.validate();
  const std::size_t nodes = spec.node_count();
  const std::size_t m = spec.outputs();
  const auto n = static_cast<Eigen::Index>(nodes * m);
  if (mass.factor.info() != Eigen::Success) throw NumericError("singular mass matrix");
  const Matrix minv = mass.inverse();

  LinearSDE sde{Matrix::Zero(2 * n, 2 * n), Vector::Zero(2 * n), Matrix::Zero(2 * n, 2 * n), nodes, m,
                params.friction};
  sde.A.topRightCorner(n, n).setIdentity();
  sde.A.bottomLeftCorner(n, n) = -expand_outputs(minv * op.K, m);
  sde.A.bottomRightCorner(n, n) = -params.friction * Matrix::Identity(n, n);

  const Matrix accel = minv * op.c;  // ν×m
  for (Eigen::Index a = 0; a < accel.rows(); ++a)
    for (Eigen::Index p = 0; p < accel.cols(); ++p) sde.b(n + a * accel.cols() + p) = accel(a, p);

  const double kt = params.thermal_energy();
  if (params.friction > 0.0 && kt > 0.0) {
    if (params.noise == NoiseModel::Diagonal) {
      sde.B.bottomRightCorner(n, n) = params.sigma() * Matrix::Identity(n, n);
    } else {
      const Matrix chol = Eigen::LLT<Matrix>(minv).matrixL();
      sde.B.bottomRightCorner(n, n) = std::sqrt(2.0 * params.friction * kt) * expand_outputs(chol, m);
    }
  }
  return sde;
}

inline LinearSDE assemble_sde(const LatticeSpec& spec, const PhysicsParams& params, const SpringBatch& batch,
                              const MassMatrix& mass) {
  return assemble_sde(spec, params, assemble_stiffness(spec, params, batch), mass);
}

/// Scalar damped oscillator m ẍ = -k x - γ m ẋ + noise: A = [[0, 1], [-k/M, -γ]].
inline LinearSDE single_dof_sde(const PhysicsParams& params) {
  params.validate();
  LinearSDE sde{Matrix::Zero(2, 2), Vector::Zero(2), Matrix::Zero(2, 2), 1, 1, params.friction};
  sde.A << 0.0, 1.0, -params.stiffness / params.mass, -params.friction;
  sde.B(1, 1) = params.sigma();
  return sde;
}

/// Largest step the stability guard allows: 0.1 · min(1/γ, sqrt(λ_min(M) / λ_max(K))).
inline double stable_dt(const MassMatrix& mass, const Matrix& stiffness, double friction) {
  double bound = std::numeric_limits<double>::infinity();
  if (friction > 0.0) bound = 1.0 / friction;
  if (stiffness.size() > 0) {
    const double kmax = Eigen::SelfAdjointEigenSolver<Matrix>(stiffness, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    if (kmax > 0.0) {
      const double mmin =
          Eigen::SelfAdjointEigenSolver<Matrix>(mass.matrix, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
      bound = std::min(bound, std::sqrt(mmin / kmax));
    }
  }
  return 0.1 * bound;
}

/// One Euler–Maruyama step; `noise` holds standard normals for the 2n components.
inline Vector em_step(const LinearSDE& sde, const Vector& z, double dt, const Vector& noise) {
  Vector next = z + dt * (sde.A * z + sde.b) + std::sqrt(dt) * (sde.B * noise);
  if (!next.allFinite()) throw IntegrationBlowup(0, dt);
  return next;
}

/// Reusable stepper that draws noise only for velocity components.
class EulerMaruyama {
 public:
  EulerMaruyama(const LinearSDE& sde, double dt)
      : sde_(sde), dt_(dt), sqrt_dt_(std::sqrt(dt)), noise_(sde.dof()), drift_(sde.size()) {
    const Eigen::Index n = sde.dof();
    noisy_ = !sde.B.bottomRows(n).isZero(0.0);
    bvel_ = sde.B.bottomRightCorner(n, n);
  }

  void step(Vector& z, Rng& rng) {
    const Eigen::Index n = sde_.dof();
    drift_.noalias() = sde_.A * z;
    drift_ += sde_.b;
    z += dt_ * drift_;
    if (noisy_) {
      for (Eigen::Index i = 0; i < n; ++i) noise_(i) = rng.normal();
      z.tail(n).noalias() += sqrt_dt_ * (bvel_ * noise_);
    }
  }

  double dt() const noexcept { return dt_; }

 private:
  const LinearSDE& sde_;
  double dt_;
  double sqrt_dt_;
  Vector noise_;
  Vector drift_;
  Matrix bvel_;
  bool noisy_ = false;
};

struct TrajectoryLog {
  std::vector<std::size_t> steps;
  std::vector<double> times;
  std::vector<Vector> states;  // only when SdeRun::keep_states
  Vector final_state;
};

using Observer = std::function<void(std::size_t step, double t, const Vector& z)>;

/// Integrates n_steps of EM from z0, calling observers at step 0, every record_every steps, and at the end.
inline TrajectoryLog integrate(const LinearSDE& sde, Vector z0, const SdeRun& run, Rng& rng,
                               const std::vector<Observer>& observers = {}, double t0 = 0.0) {
  run.validate();
  if (z0.size() != sde.size()) throw ConfigError("initial state has the wrong dimension");
  TrajectoryLog log;
  EulerMaruyama em(sde, run.dt);
  auto record = [&](std::size_t step, const Vector& z) {
    const double t = t0 + static_cast<double>(step) * run.dt;
    log.steps.push_back(step);
    log.times.push_back(t);
    if (run.keep_states) log.states.push_back(z);
    for (const auto& obs : observers) obs(step, t, z);
  };
  record(0, z0);
  for (std::size_t s = 1; s <= run.n_steps; ++s) {
    em.step(z0, rng);
    if (!z0.allFinite()) throw IntegrationBlowup(s, run.dt);
    if (s % run.record_every == 0 || s == run.n_steps) record(s, z0);
  }
  log.final_state = std::move(z0);
  return log;
}

inline TrajectoryLog integrate(const LinearSDE& sde, Vector z0, const SdeRun& run,
                               const std::vector<Observer>& observers = {}) {
  Rng rng(run.seed);
  return integrate(sde, std::move(z0), run, rng, observers);
}

}  // namespace ss
