#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trace/data/dataset.hpp"

namespace trace::data {

enum class NoiseKind { spiral, pinwheel };
enum class Regime { L, H };

std::string to_string(NoiseKind k);
std::string to_string(Regime r);
NoiseKind parse_noise_kind(const std::string& s);
Regime parse_regime(const std::string& s);

struct SyntheticConfig {
  NoiseKind noise = NoiseKind::spiral;
  Regime regime = Regime::L;
  std::size_t n = 4000;
  std::uint64_t seed = 0;
  // Multiplies the structured noise; 0 gives noiseless targets.
  double noise_scale = 1.0;

  int x_dim() const { return regime == Regime::L ? 2 : 7; }
  double signal_scale() const { return regime == Regime::L ? 1.0 : 5.0; }
  /// "Spiral_L", "Pinwheel_H", ...
  std::string name() const;
};

/// Shared conditional mean map of the synthetic designs.
Eigen::Vector2d mean_fn(double x1, double x2);

/// Spiral arc noise: theta ~ U(0, 2pi),
/// eps = (theta cos theta + N(0, 0.2^2), theta sin theta + N(0, 0.1^2)).
/// Rows are samples.
Eigen::MatrixXd spiral_noise(std::uint64_t seed, std::size_t n);

struct SpiralDraws {
  Eigen::MatrixXd noise;      // n x 2
  std::vector<double> theta;  // arc angle per row
};
SpiralDraws spiral_noise_labeled(std::uint64_t seed, std::size_t n);

inline constexpr double kPinwheelRadius = 3.0;
inline constexpr double kPinwheelEccentricity = 0.16;
inline constexpr int kPinwheelComponents = 6;

Eigen::Vector2d pinwheel_mean(int component);
Eigen::Matrix2d pinwheel_covariance(int component);

struct PinwheelDraws {
  Eigen::MatrixXd noise;        // n x 2
  std::vector<int> components;  // chosen mixture component per row
};

/// Six-component Gaussian mixture on a regular hexagon, equal weights.
PinwheelDraws pinwheel_noise_labeled(std::uint64_t seed, std::size_t n);
Eigen::MatrixXd pinwheel_noise(std::uint64_t seed, std::size_t n);

/// Y = k f(x1, x2) + eps, Y normalized, X unnormalized.
Dataset gen_synthetic(const SyntheticConfig& cfg);

/// Rescales a volume measured in normalized Y space to original units.
double volume_rescale(double normalized_volume, const Eigen::VectorXd& y_std);

}  // namespace trace::data
