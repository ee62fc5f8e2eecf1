#include "trace/genmodels/schedule.hpp"

#include <cmath>
#include <numeric>

#include "trace/errors.hpp"

namespace trace::genmodels {

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw InvalidArgument("make_schedule: steps must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw InvalidArgument("make_schedule: need 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.steps = steps;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.betas.resize(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    s.betas[static_cast<std::size_t>(i)] =
        steps == 1 ? beta_min : beta_min + (beta_max - beta_min) * i / (steps - 1);
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.betas.size(); ++i) {
    s.alphas[i] = 1.0 - s.betas[i];
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
  return s;
}

Eigen::VectorXd diffuse_with(const Eigen::VectorXd& y, double alpha_bar,
                             const Eigen::VectorXd& eps) {
  require(y.size() == eps.size(), "diffuse: dimension mismatch");
  require(alpha_bar >= 0.0 && alpha_bar <= 1.0, "diffuse: alpha_bar outside [0,1]");
  return std::sqrt(alpha_bar) * y + std::sqrt(1.0 - alpha_bar) * eps;
}

Eigen::VectorXd diffuse(const Eigen::VectorXd& y, int t, const Eigen::VectorXd& eps,
                        const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps) throw InvalidArgument("diffuse: step index out of range");
  return diffuse_with(y, schedule.alpha_bar(t), eps);
}

Eigen::VectorXd fm_interpolate(const Eigen::VectorXd& y0, const Eigen::VectorXd& y, double t) {
  require(y0.size() == y.size(), "fm_interpolate: dimension mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("fm_interpolate: t outside [0,1]");
  return (1.0 - t) * y0 + t * y;
}

std::vector<double> vlb_weights(const NoiseSchedule& s, const std::vector<int>& steps) {
  require(!steps.empty(), "vlb_weights: empty step set");
  std::vector<double> w;
  w.reserve(steps.size());
  for (int t : steps) {
    if (t < 1 || t > s.steps) throw InvalidArgument("vlb_weights: step index out of range");
    const double beta = s.beta(t);
    const double sigma2 = beta;
    w.push_back(beta * beta / (2.0 * sigma2 * s.alpha(t) * (1.0 - s.alpha_bar(t))));
  }
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  for (double& v : w) v /= mean;
  return w;
}

}  // namespace trace::genmodels
