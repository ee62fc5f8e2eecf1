#include "trace/data/synthetic.hpp"

#include <cmath>
#include <numbers>

#include "trace/errors.hpp"
#include "trace/random.hpp"

namespace trace::data {

std::string to_string(NoiseKind k) { return k == NoiseKind::spiral ? "spiral" : "pinwheel"; }
std::string to_string(Regime r) { return r == Regime::L ? "L" : "H"; }

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "spiral") return NoiseKind::spiral;
  if (s == "pinwheel") return NoiseKind::pinwheel;
  throw InvalidArgument("unknown noise kind '" + s + "'");
}

Regime parse_regime(const std::string& s) {
  if (s == "L") return Regime::L;
  if (s == "H") return Regime::H;
  throw InvalidArgument("unknown regime '" + s + "'");
}

std::string SyntheticConfig::name() const {
  return std::string(noise == NoiseKind::spiral ? "Spiral" : "Pinwheel") + "_" +
         to_string(regime);
}

Eigen::Vector2d mean_fn(double x1, double x2) {
  return {2.0 * x1 * x1 * x1 - 3.0 * x2 * x2 + 5.0 * x2 + x1 * x2,
          x1 * x1 * x2 - 4.0 * x2 * x2 + 3.0 * x1 * x1 * x2 + 7.0};
}

SpiralDraws spiral_noise_labeled(std::uint64_t seed, std::size_t n) {
  Rng rng = make_rng(seed, "spiral_noise");
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> eta1(0.0, 0.2);
  std::normal_distribution<double> eta2(0.0, 0.1);
  SpiralDraws out;
  out.noise.resize(static_cast<Eigen::Index>(n), 2);
  out.theta.resize(n);
  for (Eigen::Index i = 0; i < out.noise.rows(); ++i) {
    const double th = angle(rng);
    out.noise(i, 0) = th * std::cos(th) + eta1(rng);
    out.noise(i, 1) = th * std::sin(th) + eta2(rng);
    out.theta[static_cast<std::size_t>(i)] = th;
  }
  return out;
}

Eigen::MatrixXd spiral_noise(std::uint64_t seed, std::size_t n) {
  return spiral_noise_labeled(seed, n).noise;
}

Eigen::Vector2d pinwheel_mean(int k) {
  const double th = 2.0 * std::numbers::pi * k / kPinwheelComponents;
  return kPinwheelRadius * Eigen::Vector2d(std::cos(th), std::sin(th));
}

Eigen::Matrix2d pinwheel_covariance(int k) {
  const double th = 2.0 * std::numbers::pi * k / kPinwheelComponents;
  Eigen::Matrix2d q;
  q << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  const Eigen::Vector2d d(1.0, kPinwheelEccentricity * kPinwheelEccentricity);
  return q * d.asDiagonal() * q.transpose();
}

PinwheelDraws pinwheel_noise_labeled(std::uint64_t seed, std::size_t n) {
  Rng rng = make_rng(seed, "pinwheel_noise");
  std::uniform_int_distribution<int> pick(0, kPinwheelComponents - 1);
  std::normal_distribution<double> z(0.0, 1.0);
  PinwheelDraws out;
  out.noise.resize(static_cast<Eigen::Index>(n), 2);
  out.components.resize(n);
  for (Eigen::Index i = 0; i < out.noise.rows(); ++i) {
    const int k = pick(rng);
    const double th = 2.0 * std::numbers::pi * k / kPinwheelComponents;
    // Q diag(1, e) z has covariance Q diag(1, e^2) Q^T.
    const double a = z(rng);
    const double b = kPinwheelEccentricity * z(rng);
    const Eigen::Vector2d mu = pinwheel_mean(k);
    out.noise(i, 0) = mu(0) + std::cos(th) * a - std::sin(th) * b;
    out.noise(i, 1) = mu(1) + std::sin(th) * a + std::cos(th) * b;
    out.components[static_cast<std::size_t>(i)] = k;
  }
  return out;
}

Eigen::MatrixXd pinwheel_noise(std::uint64_t seed, std::size_t n) {
  return pinwheel_noise_labeled(seed, n).noise;
}

Dataset gen_synthetic(const SyntheticConfig& cfg) {
  require(cfg.n >= 1, "gen_synthetic: n must be >= 1");
  const auto n = static_cast<Eigen::Index>(cfg.n);
  const int p = cfg.x_dim();

  Rng rng = make_rng(cfg.seed, "synthetic_x");
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) X(i, j) = z(rng);
  if (cfg.regime == Regime::L) {
    X.col(0).array() -= 2.0;
    X.col(1).array() -= 1.5;
  }

  const Eigen::MatrixXd noise = cfg.noise == NoiseKind::spiral
                                    ? spiral_noise(cfg.seed, cfg.n)
                                    : pinwheel_noise(cfg.seed, cfg.n);
  Eigen::MatrixXd Y(n, 2);
  const double k = cfg.signal_scale();
  for (Eigen::Index i = 0; i < n; ++i)
    Y.row(i) = k * mean_fn(X(i, 0), X(i, 1)).transpose() + cfg.noise_scale * noise.row(i);

  Dataset ds;
  const auto stats = column_stats(Y);
  ds.X = std::move(X);
  ds.Y = normalize(Y, stats);
  ds.y_mean = stats.mean;
  ds.y_std = stats.std;
  ds.provenance = "synthetic:" + cfg.name();
  ds.seed = cfg.seed;
  return ds;
}

double volume_rescale(double normalized_volume, const Eigen::VectorXd& y_std) {
  return normalized_volume * y_std.prod();
}

}  // namespace trace::data
