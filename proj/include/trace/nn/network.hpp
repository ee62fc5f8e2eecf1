#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace trace::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Architecture of a FiLM-conditioned residual MLP.
///
/// The main path sees the state vector (y_t) and a sinusoidal embedding of
/// the time t. The conditioning path sees x and the same time embedding and
/// produces, per block, a scale and a shift applied to the block's hidden
/// pre-activation.
struct NetworkConfig {
  int state_dim = 2;    // dimension of y_t (and of the output)
  int cond_dim = 2;     // dimension of the conditioning input x
  int hidden = 128;
  int blocks = 4;
  int cond_width = 64;  // width of the conditioning embedding
  int time_freqs = 8;

  int time_features() const { return 2 * time_freqs; }
  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

struct FilmBlock {
  MatrixXd w1;      // hidden x hidden
  VectorXd b1;
  MatrixXd w2;      // hidden x hidden
  VectorXd b2;
  MatrixXd film_w;  // 2*hidden x cond_width; rows [0,h) scale, [h,2h) shift
  VectorXd film_b;
};

/// Read-only or mutable view of one parameter tensor (column-major storage).
template <typename T>
struct TensorRef {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  T* data;

  std::span<T> values() const { return {data, static_cast<std::size_t>(rows * cols)}; }
};

struct NetworkParams {
  NetworkConfig config;
  MatrixXd in_w;  // hidden x (state_dim + time_features)
  VectorXd in_b;
  MatrixXd cond1_w;  // cond_width x (cond_dim + time_features)
  VectorXd cond1_b;
  MatrixXd cond2_w;  // cond_width x cond_width
  VectorXd cond2_b;
  std::vector<FilmBlock> blocks;
  MatrixXd out_w;  // state_dim x hidden
  VectorXd out_b;

  /// Every tensor in a fixed order; names are stable and used in checkpoints.
  std::vector<TensorRef<double>> tensors();
  std::vector<TensorRef<const double>> tensors() const;

  std::size_t parameter_count() const;
  /// Same shapes, every entry zero.
  NetworkParams zeros_like() const;
  bool same_shape(const NetworkParams& other) const;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, FiLM generators
/// zero (scale 1, shift 0 at initialization).
NetworkParams init_network(std::uint64_t seed, const NetworkConfig& config);

/// Sinusoidal features [sin(pi 2^k t), cos(pi 2^k t)] for k < freqs.
VectorXd time_embedding(double t, int freqs);

/// Batched forward pass. Columns are items: states is state_dim x N,
/// times has N entries, conds is cond_dim x N. Returns state_dim x N.
MatrixXd forward_batch(const NetworkParams& params, const MatrixXd& states,
                       const VectorXd& times, const MatrixXd& conds);

VectorXd forward(const NetworkParams& params, const VectorXd& state, double t,
                 const VectorXd& cond);

/// Conditioning terms for one fixed (t, x): the time part of the input
/// projection and the per-block FiLM scale/shift. Reused across many states.
struct Conditioning {
  VectorXd in_bias;
  std::vector<VectorXd> scale;
  std::vector<VectorXd> shift;
};

Conditioning precondition(const NetworkParams& params, double t, const VectorXd& cond);

/// Forward pass for a batch of states sharing one conditioning.
MatrixXd forward_conditioned(const NetworkParams& params, const Conditioning& c,
                             const MatrixXd& states);

/// A training minibatch in column layout.
struct Batch {
  MatrixXd states;   // state_dim x N
  VectorXd times;    // N
  MatrixXd conds;    // cond_dim x N
  MatrixXd targets;  // state_dim x N

  Eigen::Index size() const { return states.cols(); }
};

struct LossAndGrad {
  double loss = 0.0;
  NetworkParams grad;
};

/// loss = mean over items of ||forward - target||^2, with its exact
/// reverse-mode gradient.
LossAndGrad loss_and_grad(const NetworkParams& params, const Batch& batch);

/// Loss only (no gradient bookkeeping).
double batch_loss(const NetworkParams& params, const Batch& batch);

}  // namespace trace::nn
