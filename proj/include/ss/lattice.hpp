#pragma once

// Grid geometry of the sticks lattice and the multilinear inference rule.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ss/error.hpp"

namespace ss {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using MultiIndex = std::vector<std::size_t>;

/// Regular grid of nodes r(i) = origin + i ⊙ spacing, with N_k nodes along dimension k.
/// Nodes are linearized row-major over (i_1, ..., i_d): the last index varies fastest.
class LatticeSpec {
 public:
  LatticeSpec(std::vector<std::size_t> nodes_per_dim, std::vector<double> origin, std::vector<double> spacing,
              std::size_t outputs = 1)
      : nodes_(std::move(nodes_per_dim)), origin_(std::move(origin)), spacing_(std::move(spacing)), outputs_(outputs) {
    if (nodes_.empty()) throw ConfigError("lattice needs at least one input dimension", "lattice.nodes");
    if (origin_.size() != nodes_.size() || spacing_.size() != nodes_.size())
      throw ConfigError("origin and spacing must have one entry per input dimension", "lattice");
    if (outputs_ == 0) throw ConfigError("output dimension must be >= 1", "lattice.outputs");
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      if (nodes_[k] < 2) throw ConfigError("every dimension needs >= 2 nodes (one stick)", "lattice.nodes");
      if (!(spacing_[k] > 0.0) || !std::isfinite(spacing_[k]))
        throw ConfigError("spacing must be positive and finite", "lattice.spacing");
      if (!std::isfinite(origin_[k])) throw ConfigError("origin must be finite", "lattice.origin");
    }
    strides_.assign(nodes_.size(), 1);
    for (std::size_t k = nodes_.size() - 1; k > 0; --k) strides_[k - 1] = strides_[k] * nodes_[k];
    node_count_ = strides_[0] * nodes_[0];
  }

  /// Lattice with `sticks[k]` equal sticks spanning [lo[k], hi[k]] along each dimension.
  static LatticeSpec covering(std::span<const std::size_t> sticks, std::span<const double> lo,
                              std::span<const double> hi, std::size_t outputs = 1) {
    if (sticks.size() != lo.size() || lo.size() != hi.size())
      throw ConfigError("sticks, lo and hi must have equal length", "lattice");
    std::vector<std::size_t> nodes(sticks.size());
    std::vector<double> spacing(sticks.size());
    for (std::size_t k = 0; k < sticks.size(); ++k) {
      if (sticks[k] < 1) throw ConfigError("need >= 1 stick per dimension", "lattice.sticks");
      if (!(hi[k] > lo[k])) throw ConfigError("domain upper bound must exceed lower bound", "data.domain");
      nodes[k] = sticks[k] + 1;
      spacing[k] = (hi[k] - lo[k]) / static_cast<double>(sticks[k]);
    }
    return LatticeSpec(std::move(nodes), {lo.begin(), lo.end()}, std::move(spacing), outputs);
  }

  std::size_t dim() const noexcept { return nodes_.size(); }
  std::size_t outputs() const noexcept { return outputs_; }
  const std::vector<std::size_t>& nodes_per_dim() const noexcept { return nodes_; }
  const std::vector<double>& origin() const noexcept { return origin_; }
  const std::vector<double>& spacing() const noexcept { return spacing_; }

  /// ν
  std::size_t node_count() const noexcept { return node_count_; }

  /// N_s = ∏ (N_k - 1)
  std::size_t stick_count() const noexcept {
    return std::accumulate(nodes_.begin(), nodes_.end(), std::size_t{1},
                           [](std::size_t acc, std::size_t n) { return acc * (n - 1); });
  }

  double lower(std::size_t k) const { return origin_[k]; }
  double upper(std::size_t k) const { return origin_[k] + static_cast<double>(nodes_[k] - 1) * spacing_[k]; }

  std::size_t node_index(std::span<const std::size_t> multi) const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < multi.size(); ++k) n += multi[k] * strides_[k];
    return n;
  }

  MultiIndex multi_index(std::size_t node) const {
    MultiIndex multi(dim());
    for (std::size_t k = 0; k < dim(); ++k) {
      multi[k] = node / strides_[k];
      node %= strides_[k];
    }
    return multi;
  }

  std::size_t stride(std::size_t k) const { return strides_[k]; }

  std::vector<double> position(std::span<const std::size_t> multi) const {
    std::vector<double> r(dim());
    for (std::size_t k = 0; k < dim(); ++k) r[k] = origin_[k] + static_cast<double>(multi[k]) * spacing_[k];
    return r;
  }

  bool contains(std::span<const double> u) const noexcept {
    if (u.size() != dim()) return false;
    for (std::size_t k = 0; k < dim(); ++k)
      if (!(u[k] >= lower(k) && u[k] <= upper(k))) return false;
    return true;
  }

  /// Calls fn(a, b) once per stick edge: node pairs differing by one in a single index.
  void for_each_edge(const std::function<void(std::size_t, std::size_t)>& fn) const {
    for (std::size_t n = 0; n < node_count_; ++n) {
      const MultiIndex multi = multi_index(n);
      for (std::size_t k = 0; k < dim(); ++k)
        if (multi[k] + 1 < nodes_[k]) fn(n, n + strides_[k]);
    }
  }

  bool operator==(const LatticeSpec&) const = default;

 private:
  std::vector<std::size_t> nodes_;
  std::vector<double> origin_;
  std::vector<double> spacing_;
  std::size_t outputs_;
  std::vector<std::size_t> strides_;
  std::size_t node_count_ = 0;
};

/// Node heights x and velocities v, one row per node, one column per output coordinate.
struct GridState {
  Matrix x;
  Matrix v;

  static GridState zeros(const LatticeSpec& spec) {
    return {Matrix::Zero(static_cast<Eigen::Index>(spec.node_count()), static_cast<Eigen::Index>(spec.outputs())),
            Matrix::Zero(static_cast<Eigen::Index>(spec.node_count()), static_cast<Eigen::Index>(spec.outputs()))};
  }

  bool matches(const LatticeSpec& spec) const noexcept {
    const auto rows = static_cast<Eigen::Index>(spec.node_count());
    const auto cols = static_cast<Eigen::Index>(spec.outputs());
    return x.rows() == rows && x.cols() == cols && v.rows() == rows && v.cols() == cols;
  }

  bool finite() const noexcept { return x.allFinite() && v.allFinite(); }
};

struct CellCoords {
  MultiIndex cell;
  std::vector<double> lambda;
};

struct NodeWeight {
  std::size_t node;
  double weight;
};

/// The 2^d corner weights of one input; ŷ = Σ weight · x[node].
using NodeWeights = std::vector<NodeWeight>;

inline CellCoords locate(const LatticeSpec& spec, std::span<const double> u) {
  if (u.size() != spec.dim())
    throw ConfigError("input has " + std::to_string(u.size()) + " coordinates, lattice expects " +
                      std::to_string(spec.dim()));
  CellCoords out{MultiIndex(spec.dim()), std::vector<double>(spec.dim())};
  for (std::size_t k = 0; k < spec.dim(); ++k) {
    const double lo = spec.lower(k);
    const double hi = spec.upper(k);
    if (!(u[k] >= lo && u[k] <= hi)) throw DomainError(k, u[k], lo, hi);
    const std::size_t last_cell = spec.nodes_per_dim()[k] - 2;
    const double h = spec.spacing()[k];
    const double scaled = (u[k] - lo) / h;
    auto cell = static_cast<std::size_t>(std::floor(scaled));
    // Rounding in (u - lo) / h can land a hair on the wrong side of a node.
    if (cell > 0 && u[k] < lo + static_cast<double>(cell) * h) --cell;
    if (cell < last_cell && u[k] >= lo + static_cast<double>(cell + 1) * h) ++cell;
    if (cell > last_cell) cell = last_cell;  // upper face clamps into the last cell (λ = 1)
    out.cell[k] = cell;
    out.lambda[k] = u[k] >= hi ? 1.0 : (u[k] - (lo + static_cast<double>(cell) * h)) / h;
  }
  return out;
}

inline NodeWeights interpolation_weights(const LatticeSpec& spec, std::span<const double> u) {
  const CellCoords cc = locate(spec, u);
  const std::size_t d = spec.dim();
  const std::size_t base = spec.node_index(cc.cell);
  NodeWeights weights;
  weights.reserve(std::size_t{1} << d);
  for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
    double w = 1.0;
    std::size_t node = base;
    for (std::size_t b = 0; b < d; ++b) {
      if ((corner >> (d - 1 - b)) & 1U) {
        w *= cc.lambda[b];
        node += spec.stride(b);
      } else {
        w *= 1.0 - cc.lambda[b];
      }
    }
    weights.push_back({node, w});
  }
  return weights;
}

inline Vector interpolate_with(const NodeWeights& weights, const Matrix& x) {
  Vector y = Vector::Zero(x.cols());
  for (const auto& [node, w] : weights) y += w * x.row(static_cast<Eigen::Index>(node)).transpose();
  return y;
}

/// Multilinear prediction ŷ(u) from the heights of the enclosing cell's corners.
inline Vector interpolate(const LatticeSpec& spec, const GridState& state, std::span<const double> u) {
  return interpolate_with(interpolation_weights(spec, u), state.x);
}

}  // namespace ss
