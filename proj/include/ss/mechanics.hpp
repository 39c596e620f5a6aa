#pragma once

// Mass matrix from the stick kinetic energies and the linear spring forces of a batch.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ss/error.hpp"
#include "ss/lattice.hpp"

namespace ss {

enum class NoiseModel {
  /// D_vv = γ k_b T M_mat⁻¹: the Langevin bath that samples the Boltzmann distribution.
  MassConsistent,
  /// B_vv = σ I with σ = sqrt(2 γ T k_b / M), one independent kick per velocity dof.
  Diagonal,
};

struct PhysicsParams {
  double mass = 1.0;         // M, per stick
  double stiffness = 1.0;    // k
  double friction = 1.0;     // γ, 1/time
  double temperature = 0.0;  // T
  double boltzmann = 1.0;    // k_b
  NoiseModel noise = NoiseModel::MassConsistent;

  double thermal_energy() const noexcept { return boltzmann * temperature; }

  double sigma() const noexcept { return std::sqrt(2.0 * friction * temperature * boltzmann / mass); }

  void validate() const {
    if (!(mass > 0.0) || !std::isfinite(mass)) throw ConfigError("mass must be > 0", "physics.mass");
    if (!(stiffness >= 0.0) || !std::isfinite(stiffness)) throw ConfigError("stiffness must be >= 0", "physics.stiffness");
    if (!(friction >= 0.0) || !std::isfinite(friction)) throw ConfigError("friction must be >= 0", "physics.friction");
    if (!(temperature >= 0.0) || !std::isfinite(temperature))
      throw ConfigError("temperature must be >= 0", "physics.temperature");
    if (!(boltzmann > 0.0) || !std::isfinite(boltzmann)) throw ConfigError("boltzmann must be > 0", "physics.boltzmann");
    if (!std::isfinite(sigma())) throw ConfigError("noise amplitude is not finite", "physics");
  }
};

/// ν×ν matrix with K = ½ Σ_p v_pᵀ M v_p; shared by all output coordinates.
struct MassMatrix {
  Matrix matrix;
  Eigen::LLT<Matrix> factor;

  Eigen::Index size() const noexcept { return matrix.rows(); }
  Matrix inverse() const { return factor.solve(Matrix::Identity(matrix.rows(), matrix.cols())); }
};

/// Springs of one mini-batch: inputs u_j, targets y_j and the precomputed corner weights of each u_j.
struct SpringBatch {
  std::vector<std::vector<double>> inputs;
  Matrix targets;  // B×m
  std::vector<NodeWeights> weights;

  std::size_t size() const noexcept { return inputs.size(); }

  static SpringBatch make(const LatticeSpec& spec, std::vector<std::vector<double>> inputs, Matrix targets) {
    if (inputs.empty()) throw ConfigError("a spring batch needs at least one data point");
    if (static_cast<std::size_t>(targets.rows()) != inputs.size() ||
        static_cast<std::size_t>(targets.cols()) != spec.outputs())
      throw ConfigError("batch targets must be B×m");
    SpringBatch b{std::move(inputs), std::move(targets), {}};
    b.weights.reserve(b.inputs.size());
    for (const auto& u : b.inputs) b.weights.push_back(interpolation_weights(spec, u));
    return b;
  }

  /// No springs attached (the state before the first batch).
  static SpringBatch detached(const LatticeSpec& spec) {
    return {{}, Matrix::Zero(0, static_cast<Eigen::Index>(spec.outputs())), {}};
  }
};

/// The linear force of a batch, f = -K x + c, and its potential
/// U = ½ tr(xᵀ K x) - tr(cᵀ x) + offset.
struct StiffnessOperator {
  Matrix K;  // ν×ν
  Matrix c;  // ν×m
  double offset = 0.0;

  Matrix force(const Matrix& x) const { return -K * x + c; }

  double energy(const Matrix& x) const {
    return 0.5 * (x.transpose() * K * x).trace() - (c.transpose() * x).trace() + offset;
  }
};

inline MassMatrix assemble_mass(const LatticeSpec& spec, const PhysicsParams& params) {
  params.validate();
  const auto nu = static_cast<Eigen::Index>(spec.node_count());
  Matrix m = Matrix::Zero(nu, nu);
  // Per stick: M/8 (va+vb)² + M/24 (vb-va)²  ⇒  Hessian [[M/3, M/6], [M/6, M/3]].
  const double diag = params.mass / 3.0;
  const double off = params.mass / 6.0;
  spec.for_each_edge([&](std::size_t a, std::size_t b) {
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(b);
    m(ia, ia) += diag;
    m(ib, ib) += diag;
    m(ia, ib) += off;
    m(ib, ia) += off;
  });
  MassMatrix out{std::move(m), {}};
  out.factor.compute(out.matrix);
  if (out.factor.info() != Eigen::Success) throw NumericError("mass matrix is not positive definite");
  return out;
}

inline StiffnessOperator assemble_stiffness(const LatticeSpec& spec, const PhysicsParams& params,
                                            const SpringBatch& batch) {
  const auto nu = static_cast<Eigen::Index>(spec.node_count());
  const auto m = static_cast<Eigen::Index>(spec.outputs());
  StiffnessOperator op{Matrix::Zero(nu, nu), Matrix::Zero(nu, m)};
  const double k = params.stiffness;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& w = batch.weights[j];
    for (const auto& [a, wa] : w) {
      const auto ia = static_cast<Eigen::Index>(a);
      for (const auto& [b, wb] : w) op.K(ia, static_cast<Eigen::Index>(b)) += k * wa * wb;
      op.c.row(ia) += k * wa * batch.targets.row(static_cast<Eigen::Index>(j));
    }
  }
  op.offset = 0.5 * k * batch.targets.squaredNorm();
  return op;
}

/// Residuals ŷ(u_j) - y_j, one row per data point.
inline Matrix batch_residuals(const GridState& state, const SpringBatch& batch) {
  Matrix r(static_cast<Eigen::Index>(batch.size()), state.x.cols());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto row = static_cast<Eigen::Index>(j);
    r.row(row) = interpolate_with(batch.weights[j], state.x).transpose() - batch.targets.row(row);
  }
  return r;
}

inline double potential_energy(const LatticeSpec& spec, const GridState& state, const PhysicsParams& params,
                               const SpringBatch& batch) {
  if (!state.matches(spec)) throw ConfigError("grid state shape does not match the lattice");
  if (batch.size() == 0) return 0.0;
  return 0.5 * params.stiffness * batch_residuals(state, batch).squaredNorm();
}

/// -∂U/∂x: each data point pushes its 2^d corners by -k (ŷ - y), split by interpolation weight.
inline Matrix spring_force(const LatticeSpec& spec, const GridState& state, const PhysicsParams& params,
                           const SpringBatch& batch) {
  if (!state.matches(spec)) throw ConfigError("grid state shape does not match the lattice");
  Matrix f = Matrix::Zero(state.x.rows(), state.x.cols());
  if (batch.size() == 0) return f;
  const Matrix r = batch_residuals(state, batch);
  for (std::size_t j = 0; j < batch.size(); ++j)
    for (const auto& [node, w] : batch.weights[j])
      f.row(static_cast<Eigen::Index>(node)) -= params.stiffness * w * r.row(static_cast<Eigen::Index>(j));
  return f;
}

inline double kinetic_energy(const MassMatrix& mass, const GridState& state) {
  return 0.5 * (state.v.transpose() * mass.matrix * state.v).trace();
}

inline double kinetic_energy(const LatticeSpec& spec, const GridState& state, const PhysicsParams& params) {
  if (!state.matches(spec)) throw ConfigError("grid state shape does not match the lattice");
  return kinetic_energy(assemble_mass(spec, params), state);
}

}  // namespace ss
