#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "trace/data/dataset.hpp"
#include "trace/genmodels/schedule.hpp"
#include "trace/nn/network.hpp"
#include "trace/nn/optim.hpp"
#include "trace/random.hpp"

namespace trace::genmodels {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct TrainConfig {
  int epochs = 400;
  int batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double ema_decay = 0.999;
  // Effective EMA decay min(decay, (1 + k) / (10 + k)) at optimizer step k,
  // so the shadow is not dominated by the initialization on short runs.
  bool ema_warmup = true;
  // Final learning rate as a fraction of lr under cosine decay; 1 = constant.
  double lr_final_fraction = 1.0;

  void validate() const;
};

/// Output of the shared training loop.
struct TrainedNetwork {
  nn::NetworkParams params;
  nn::EmaParams ema;
  std::vector<double> epoch_losses;
};

/// Fills `batch` for the minibatch rows `rows` of (X, Y); the caller owns
/// how states, times and targets are drawn.
using BatchBuilder = std::function<void(const data::Dataset& ds,
                                        std::span<const std::size_t> rows, Rng& rng,
                                        nn::Batch& batch)>;

/// Adam on minibatches of shuffled rows, EMA tracked after every step.
/// Throws NumericError (with epoch/step) on a non-finite loss.
TrainedNetwork train_network(const data::Dataset& ds, const TrainConfig& cfg,
                             const nn::NetworkConfig& arch, const BatchBuilder& build,
                             std::uint64_t stream);

struct DiffusionModel {
  nn::NetworkParams params;  // raw weights at the end of training
  nn::EmaParams ema;         // inference weights
  NoiseSchedule schedule;
  int target_dim = 0;
  int cond_dim = 0;
  std::uint64_t seed = 0;
  std::vector<double> epoch_losses;

  const nn::NetworkParams& inference() const { return ema.shadow; }
  /// Network time input for a diffusion step: t / T.
  double network_time(int t) const { return static_cast<double>(t) / schedule.steps; }
};

struct FlowModel {
  nn::NetworkParams params;
  nn::EmaParams ema;
  int target_dim = 0;
  int cond_dim = 0;
  std::uint64_t seed = 0;
  std::vector<double> epoch_losses;

  const nn::NetworkParams& inference() const { return ema.shadow; }
};

/// Noise-prediction training: t ~ U{1..T}, eps ~ N(0, I), minimize
/// ||eps - eps_hat(y_t, t, x)||^2.
DiffusionModel train_diffusion(const data::Dataset& ds, const TrainConfig& cfg,
                               const nn::NetworkConfig& arch, const NoiseSchedule& schedule);

/// Velocity regression: t ~ U[0, 1], y0 ~ N(0, I), minimize
/// ||v_hat((1-t) y0 + t y, t, x) - (y - y0)||^2.
FlowModel train_fm(const data::Dataset& ds, const TrainConfig& cfg,
                   const nn::NetworkConfig& arch);

/// Ancestral sampling. `sampler_steps` = 0 runs all T steps; a smaller value
/// runs the same sampler on an evenly respaced subsequence of the schedule.
/// Returns target_dim x n.
MatrixXd ddpm_sample_batch(const DiffusionModel& model, const VectorXd& x, int n,
                           std::uint64_t seed, int sampler_steps = 0);
VectorXd ddpm_sample(const DiffusionModel& model, const VectorXd& x, std::uint64_t seed,
                     int sampler_steps = 0);

/// Velocity as a function of (states, t) for a batch of states (columns).
using VelocityField = std::function<MatrixXd(const MatrixXd& states, double t)>;

/// Forward Euler on the uniform grid t_k = k / n_steps, k = 0..n_steps-1.
MatrixXd euler_integrate(const VelocityField& field, MatrixXd states, int n_steps);

MatrixXd fm_sample_batch(const FlowModel& model, const VectorXd& x, int n, int n_steps,
                         std::uint64_t seed);
VectorXd fm_sample(const FlowModel& model, const VectorXd& x, int n_steps, std::uint64_t seed);

/// Checkpoint (inference weights) plus JSON sidecar with the schedule or the
/// flow marker, dimensions and training seed.
void save_model(const DiffusionModel& model, const std::filesystem::path& prefix);
void save_model(const FlowModel& model, const std::filesystem::path& prefix);
DiffusionModel load_diffusion(const std::filesystem::path& prefix);
FlowModel load_flow(const std::filesystem::path& prefix);

}  // namespace trace::genmodels
