#pragma once

// Protocol work, Jarzynski free energy, and Gaussian moment propagation with the
// entropy production / flux rates of the linear Langevin system.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "ss/error.hpp"
#include "ss/langevin.hpp"
#include "ss/lattice.hpp"
#include "ss/mechanics.hpp"
#include "ss/random.hpp"
#include "ss/stats.hpp"

namespace ss {

struct WorkLedger {
  double work = 0.0;
  std::size_t n_switches = 0;

  void add_switch(double potential_before, double potential_after) {
    work += potential_after - potential_before;
    ++n_switches;
  }
};

/// Instantaneous switch old_batch → new_batch at fixed configuration: W += U_new(x) - U_old(x).
inline WorkLedger record_switch_work(WorkLedger ledger, const LatticeSpec& spec, const GridState& state,
                                     const SpringBatch& old_batch, const SpringBatch& new_batch,
                                     const PhysicsParams& params) {
  ledger.add_switch(potential_energy(spec, state, params, old_batch), potential_energy(spec, state, params, new_batch));
  return ledger;
}

/// ΔF = F_i - F_f = k_bT ln⟨exp(-W / k_bT)⟩, evaluated with log-sum-exp.
inline double jarzynski_free_energy(std::span<const double> works, double thermal_energy) {
  if (works.empty()) throw EstimatorUndefined("Jarzynski estimator needs at least one trajectory");
  if (!(thermal_energy > 0.0)) throw EstimatorUndefined("Jarzynski estimator is undefined at zero temperature");
  double peak = -std::numeric_limits<double>::infinity();
  for (double w : works) peak = std::max(peak, -w / thermal_energy);
  double sum = 0.0;
  for (double w : works) sum += std::exp(-w / thermal_energy - peak);
  return thermal_energy * (peak + std::log(sum / static_cast<double>(works.size())));
}

struct JarzynskiEstimate {
  std::size_t n_traj = 0;
  double mean_work = 0.0;
  double delta_f = 0.0;
  double boot_lo = 0.0;  // 2.5% bootstrap quantile
  double boot_hi = 0.0;  // 97.5%
  double boot_std = 0.0;
  std::uint64_t seed = 0;
};

inline JarzynskiEstimate jarzynski_bootstrap(std::span<const double> works, double thermal_energy,
                                             std::size_t n_boot = 200, std::uint64_t seed = 42) {
  JarzynskiEstimate est;
  est.n_traj = works.size();
  est.delta_f = jarzynski_free_energy(works, thermal_energy);
  est.mean_work = stats::mean(works);
  est.seed = seed;
  std::vector<double> boots;
  boots.reserve(n_boot);
  std::vector<double> sample(works.size());
  Rng rng(derive_seed(seed, 0xb0075));
  for (std::size_t b = 0; b < n_boot; ++b) {
    for (auto& w : sample) w = works[rng.below(works.size())];
    boots.push_back(jarzynski_free_energy(sample, thermal_energy));
  }
  if (boots.empty()) {
    est.boot_lo = est.boot_hi = est.delta_f;
  } else {
    est.boot_lo = stats::quantile(boots, 0.025);
    est.boot_hi = stats::quantile(boots, 0.975);
    est.boot_std = stats::stddev(boots);
  }
  return est;
}

/// Gaussian moments ⟨z⟩ and Θ = ⟨z zᵀ⟩ - ⟨z⟩⟨z⟩ᵀ.
struct MomentState {
  Vector mean;
  Matrix cov;

  bool valid(double tol = 1e-10) const {
    if (!mean.allFinite() || !cov.allFinite()) return false;
    const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > tol * scale) return false;
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(cov, Eigen::EigenvaluesOnly).eigenvalues();
    return ev.minCoeff() >= -tol * scale;
  }
};

namespace detail {

struct MomentRate {
  Vector mean;
  Matrix cov;
};

inline MomentRate moment_rate(const LinearSDE& sde, const Matrix& two_d, const Vector& mean, const Matrix& cov) {
  return {sde.A * mean + sde.b, sde.A * cov + cov * sde.A.transpose() + two_d};
}

}  // namespace detail

/// One RK4 step of d⟨z⟩/dt = A⟨z⟩ + b, dΘ/dt = AΘ + ΘAᵀ + 2D.
inline MomentState propagate_moments(const LinearSDE& sde, const MomentState& m, double dt) {
  const Matrix two_d = sde.B * sde.B.transpose();
  const auto k1 = detail::moment_rate(sde, two_d, m.mean, m.cov);
  const auto k2 = detail::moment_rate(sde, two_d, m.mean + 0.5 * dt * k1.mean, m.cov + 0.5 * dt * k1.cov);
  const auto k3 = detail::moment_rate(sde, two_d, m.mean + 0.5 * dt * k2.mean, m.cov + 0.5 * dt * k2.cov);
  const auto k4 = detail::moment_rate(sde, two_d, m.mean + dt * k3.mean, m.cov + dt * k3.cov);
  MomentState out;
  out.mean = m.mean + dt / 6.0 * (k1.mean + 2.0 * k2.mean + 2.0 * k3.mean + k4.mean);
  out.cov = m.cov + dt / 6.0 * (k1.cov + 2.0 * k2.cov + 2.0 * k3.cov + k4.cov);
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  constexpr double kOverflow = 1e150;
  if (!out.mean.allFinite() || !out.cov.allFinite() || out.cov.cwiseAbs().maxCoeff() > kOverflow ||
      out.mean.cwiseAbs().maxCoeff() > kOverflow)
    throw IntegrationBlowup(0, dt);
  return out;
}

struct EntropyRates {
  double production = 0.0;  // Π
  double flux = 0.0;        // Φ
  double entropy_change() const noexcept { return production - flux; }
};

/// Π and Φ (units of k_b per time) from the Gaussian moments. The diffusion lives on the
/// velocity block only, so every D⁻¹ is taken there; a = A_vv = -γI is the time-reversal-even drift.
///
///   dS/dt = Tr(D (Θ⁻¹)_vv) + Tr(a)
///   Φ     = Tr(aᵀ D⁻¹ a Θ_vv) + Tr(a) + (a μ_v)ᵀ D⁻¹ (a μ_v)
///   Π     = dS/dt + Φ
inline EntropyRates entropy_rates(const LinearSDE& sde, const MomentState& m) {
  const Eigen::Index n = sde.dof();
  if (!(sde.friction > 0.0)) throw SingularBlock("entropy rates need friction > 0");
  const Matrix d = sde.diffusion().bottomRightCorner(n, n);
  Eigen::LLT<Matrix> d_llt(d);
  if (d_llt.info() != Eigen::Success || d.diagonal().minCoeff() <= 0.0)
    throw SingularBlock("velocity diffusion block is singular (zero temperature or friction)");
  Eigen::LLT<Matrix> cov_llt(m.cov);
  if (cov_llt.info() != Eigen::Success) throw SingularBlock("covariance is not positive definite");

  const Matrix cov_inv = cov_llt.solve(Matrix::Identity(m.cov.rows(), m.cov.cols()));
  const Matrix a = sde.A.bottomRightCorner(n, n);
  const Matrix theta_vv = m.cov.bottomRightCorner(n, n);
  const Vector drift = a * m.mean.tail(n);

  const double change = (d * cov_inv.bottomRightCorner(n, n)).trace() + a.trace();
  const double flux = (a.transpose() * d_llt.solve(a) * theta_vv).trace() + a.trace() + drift.dot(d_llt.solve(drift));
  return {change + flux, flux};
}

/// Differential entropy of the Gaussian, ½ ln det(2πe Θ), in units of k_b.
inline double gaussian_entropy(const MomentState& m) {
  Eigen::LLT<Matrix> llt(m.cov);
  if (llt.info() != Eigen::Success) throw SingularBlock("covariance is not positive definite");
  const Matrix l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double n = static_cast<double>(m.cov.rows());
  return 0.5 * (log_det + n * std::log(2.0 * std::numbers::pi * std::numbers::e));
}

/// Mean energies of the Gaussian ensemble: ⟨K⟩ and ⟨U⟩ for the batch in `op`.
inline double mean_kinetic_energy(const MassMatrix& mass, std::size_t outputs, const MomentState& m) {
  const Eigen::Index n = m.mean.size() / 2;
  const Matrix mm = expand_outputs(mass.matrix, outputs);
  const Vector mu = m.mean.tail(n);
  return 0.5 * ((mm * m.cov.bottomRightCorner(n, n)).trace() + mu.dot(mm * mu));
}

inline double mean_potential_energy(const StiffnessOperator& op, std::size_t outputs, const MomentState& m) {
  const Eigen::Index n = m.mean.size() / 2;
  const Matrix kk = expand_outputs(op.K, outputs);
  const Vector mu = m.mean.head(n);
  Vector c(n);
  for (Eigen::Index a = 0; a < op.c.rows(); ++a)
    for (Eigen::Index p = 0; p < op.c.cols(); ++p) c(a * op.c.cols() + p) = op.c(a, p);
  return 0.5 * ((kk * m.cov.topLeftCorner(n, n)).trace() + mu.dot(kk * mu)) - c.dot(mu) + op.offset;
}

}  // namespace ss
