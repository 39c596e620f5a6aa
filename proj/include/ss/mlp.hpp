#pragma once

// One-hidden-layer ReLU network trained by plain SGD, the baseline for the SS comparison.
// With bias_trainable = false (MLPf) both bias vectors stay at their random initial values.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ss/error.hpp"
#include "ss/lattice.hpp"
#include "ss/random.hpp"
#include "ss/training.hpp"

namespace ss {

struct MlpParams {
  Matrix w1;  // h×d
  Vector b1;  // h
  Matrix w2;  // m×h
  Vector b2;  // m
  bool bias_trainable = true;

  std::size_t hidden() const noexcept { return static_cast<std::size_t>(w1.rows()); }
  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(w1.cols()); }
  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(w2.rows()); }

  void validate() const {
    if (w1.rows() < 1 || b1.size() != w1.rows() || w2.cols() != w1.rows() || b2.size() != w2.rows())
      throw ConfigError("inconsistent MLP parameter shapes", "mlp");
    if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite())
      throw NumericError("MLP parameters are not finite");
  }
};

/// Every entry uniform in ±1/sqrt(fan_in) of its layer.
inline MlpParams mlp_init(std::size_t input_dim, std::size_t output_dim, std::size_t hidden, bool bias_trainable,
                          std::uint64_t seed) {
  if (input_dim < 1 || output_dim < 1 || hidden < 1) throw ConfigError("MLP sizes must be >= 1", "mlp.hidden");
  Rng rng(derive_seed(seed, 0x3119));
  const auto h = static_cast<Eigen::Index>(hidden);
  const auto d = static_cast<Eigen::Index>(input_dim);
  const auto m = static_cast<Eigen::Index>(output_dim);
  MlpParams p{Matrix(h, d), Vector(h), Matrix(m, h), Vector(m), bias_trainable};
  const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = rng.uniform(-s1, s1);
  for (Eigen::Index i = 0; i < h; ++i) p.b1(i) = rng.uniform(-s1, s1);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = rng.uniform(-s2, s2);
  for (Eigen::Index i = 0; i < m; ++i) p.b2(i) = rng.uniform(-s2, s2);
  return p;
}

inline Vector mlp_forward(const MlpParams& p, std::span<const double> u) {
  const Eigen::Map<const Vector> x(u.data(), static_cast<Eigen::Index>(u.size()));
  const Vector hidden = (p.w1 * x + p.b1).cwiseMax(0.0);
  return p.w2 * hidden + p.b2;
}

struct MlpGrad {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

/// Gradient of (1/B) Σ_j |net(u_j) - y_j|² over the rows `indices` of the dataset.
inline MlpGrad mlp_grad(const MlpParams& p, const Dataset& data, std::span<const std::size_t> indices) {
  MlpGrad g{Matrix::Zero(p.w1.rows(), p.w1.cols()), Vector::Zero(p.b1.size()), Matrix::Zero(p.w2.rows(), p.w2.cols()),
            Vector::Zero(p.b2.size())};
  if (indices.empty()) return g;
  const double scale = 2.0 / static_cast<double>(indices.size());
  for (std::size_t i : indices) {
    const Vector x = data.inputs.row(static_cast<Eigen::Index>(i)).transpose();
    const Vector pre = p.w1 * x + p.b1;
    const Vector act = pre.cwiseMax(0.0);
    const Vector r = p.w2 * act + p.b2 - data.targets.row(static_cast<Eigen::Index>(i)).transpose();
    g.w2 += scale * r * act.transpose();
    g.b2 += scale * r;
    Vector back = p.w2.transpose() * r;
    for (Eigen::Index k = 0; k < back.size(); ++k)
      if (pre(k) <= 0.0) back(k) = 0.0;
    g.w1 += scale * back * x.transpose();
    g.b1 += scale * back;
  }
  if (!p.bias_trainable) {
    g.b1.setZero();
    g.b2.setZero();
  }
  return g;
}

inline double mlp_loss(const MlpParams& p, const Dataset& data) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto u = data.input(i);
    total += (mlp_forward(p, u) - data.targets.row(static_cast<Eigen::Index>(i)).transpose()).squaredNorm();
  }
  return total / static_cast<double>(data.size());
}

struct MlpOptions {
  double lr = 1e-2;
  std::size_t epochs = 1000;
  std::size_t batch_size = 16;
  std::uint64_t seed = 42;

  void validate(std::size_t n_points) const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be >= 0", "mlp.lr");
    if (epochs < 1) throw ConfigError("epochs must be >= 1", "schedule.epochs");
    if (batch_size < 1 || batch_size > n_points) throw ConfigError("batch size must be in [1, N]", "schedule.batch_size");
  }
};

struct MlpReport {
  std::vector<double> loss;  // full-dataset loss after each epoch
  double initial_loss = 0.0;
  bool diverged = false;
  double wall_seconds = 0.0;
  MlpParams final_params;
};

/// One SGD step per epoch on that epoch's batch; the batch sequence matches train() for the same seed.
inline MlpReport mlp_train(MlpParams p, const Dataset& data, const MlpOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  p.validate();
  data.validate();
  opt.validate(data.size());
  if (data.input_dim() != p.input_dim() || data.output_dim() != p.output_dim())
    throw ConfigError("dataset dimensions do not match the network");

  MlpReport report;
  report.initial_loss = mlp_loss(p, data);
  BatchSchedule batches(data.size(), opt.batch_size, opt.seed);
  const double limit = 1e6 * std::max(report.initial_loss, 1e-300);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto idx = batches.next();
    const MlpGrad g = mlp_grad(p, data, idx);
    p.w1 -= opt.lr * g.w1;
    p.b1 -= opt.lr * g.b1;
    p.w2 -= opt.lr * g.w2;
    p.b2 -= opt.lr * g.b2;
    const double loss = mlp_loss(p, data);
    report.loss.push_back(loss);
    if (!std::isfinite(loss) || loss > limit) {
      report.diverged = true;
      break;
    }
  }
  report.final_params = std::move(p);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

/// Same `epoch,loss,U,K,W_acc` schema as the SS trainer; the energy columns are 0 for a network.
inline void write_mlp_report(std::ostream& os, const MlpReport& report) {
  csv::Writer w(os);
  w.header({"epoch", "loss", "U", "K", "W_acc"});
  for (std::size_t e = 0; e < report.loss.size(); ++e) w.row(e + 1, report.loss[e], 0.0, 0.0, 0.0);
}

}  // namespace ss
