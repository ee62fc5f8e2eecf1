// Reference computations shared by the unit tests and the acceptance binary.
// Everything here is written from the model definitions directly and does
// not call the code paths it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "trace/nn/network.hpp"
#include "trace/random.hpp"

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline VectorXd silu(const VectorXd& v) { return v.array() / (1.0 + (-v.array()).exp()); }

/// Plain per-sample forward pass of the FiLM residual MLP.
inline VectorXd forward(const trace::nn::NetworkParams& p, const VectorXd& y, double t, const VectorXd& x) {
  const int f = p.config.time_freqs;
  VectorXd temb(2 * f);
  for (int k = 0; k < f; ++k) {
    temb(2 * k) = std::sin(std::numbers::pi * std::pow(2.0, k) * t);
    temb(2 * k + 1) = std::cos(std::numbers::pi * std::pow(2.0, k) * t);
  }
  VectorXd cin(x.size() + temb.size());
  cin << x, temb;
  const VectorXd c = silu(p.cond2_w * silu(p.cond1_w * cin + p.cond1_b) + p.cond2_b);
  VectorXd in(y.size() + temb.size());
  in << y, temb;
  VectorXd h = p.in_w * in + p.in_b;
  const auto hid = p.config.hidden;
  for (const auto& b : p.blocks) {
    const VectorXd film = b.film_w * c + b.film_b;
    const VectorXd u = (film.head(hid).array() + 1.0) * (b.w1 * h + b.b1).array() + film.tail(hid).array();
    h += b.w2 * silu(u) + b.b2;
  }
  return p.out_w * h + p.out_b;
}

/// Randomizes every parameter, FiLM generators included, so no path is
/// trivially zero.
inline void scramble(trace::nn::NetworkParams& p, std::uint64_t seed, double scale = 0.5) {
  trace::Rng rng(seed);
  std::normal_distribution<double> z(0.0, scale);
  for (auto& t : p.tensors())
    for (double& v : t.values()) v = z(rng) / std::sqrt(static_cast<double>(std::max<Eigen::Index>(t.cols, 1)));
}

struct FdResult {
  double max_rel_error = 0.0;
  int coordinates = 0;
};

/// Central differences on `coords` random parameter coordinates against
/// the analytic gradient. Relative error |a - n| / max(|a|, |n|, floor).
inline FdResult fd_gradient_check(const trace::nn::NetworkParams& p, const trace::nn::Batch& batch, int coords,
                                  std::uint64_t seed, double h = 1e-5, double floor = 1e-7) {
  const auto lg = trace::nn::loss_and_grad(p, batch);
  auto params = p;
  auto ptensors = params.tensors();
  const auto gtensors = lg.grad.tensors();
  std::size_t total = 0;
  for (const auto& t : ptensors) total += t.values().size();
  trace::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  FdResult res;
  for (int i = 0; i < coords; ++i) {
    std::size_t k = pick(rng), ti = 0;
    while (k >= ptensors[ti].values().size()) k -= ptensors[ti++].values().size();
    double& w = ptensors[ti].values()[k];
    const double w0 = w;
    w = w0 + h;
    const double lp = trace::nn::batch_loss(params, batch);
    w = w0 - h;
    const double lm = trace::nn::batch_loss(params, batch);
    w = w0;
    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic = gtensors[ti].values()[k];
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    res.max_rel_error = std::max(res.max_rel_error, rel);
    ++res.coordinates;
  }
  return res;
}

inline trace::nn::Batch random_batch(const trace::nn::NetworkConfig& cfg, int n, std::uint64_t seed) {
  trace::Rng rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  trace::nn::Batch b;
  b.states = MatrixXd::NullaryExpr(cfg.state_dim, n, [&] { return z(rng); });
  b.times = VectorXd::NullaryExpr(n, [&] { return u(rng); });
  b.conds = MatrixXd::NullaryExpr(cfg.cond_dim, n, [&] { return z(rng); });
  b.targets = MatrixXd::NullaryExpr(cfg.state_dim, n, [&] { return z(rng); });
  return b;
}

}  // namespace oracle
