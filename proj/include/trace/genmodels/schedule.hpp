#pragma once

#include <vector>

#include <Eigen/Dense>

namespace trace::genmodels {

/// Linear-beta DDPM schedule. Step indices are 1-based: beta(1) .. beta(T).
struct NoiseSchedule {
  int steps = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
  double alpha(int t) const { return alphas.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t - 1)); }
};

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max);

/// y_t = sqrt(abar_t) y + sqrt(1 - abar_t) eps.
Eigen::VectorXd diffuse(const Eigen::VectorXd& y, int t, const Eigen::VectorXd& eps,
                        const NoiseSchedule& schedule);
/// Same map with an explicit cumulative coefficient (abar in [0, 1]).
Eigen::VectorXd diffuse_with(const Eigen::VectorXd& y, double alpha_bar,
                             const Eigen::VectorXd& eps);

/// (1 - t) y0 + t y on the straight flow-matching path.
Eigen::VectorXd fm_interpolate(const Eigen::VectorXd& y0, const Eigen::VectorXd& y, double t);

/// Per-step weights beta_t^2 / (2 sigma_t^2 alpha_t (1 - abar_t)) with
/// sigma_t^2 = beta_t, for the given step indices, normalized to mean 1.
std::vector<double> vlb_weights(const NoiseSchedule& schedule, const std::vector<int>& steps);

}  // namespace trace::genmodels
