#pragma once

#include <cstdint>

#include "trace/nn/network.hpp"

namespace trace::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  NetworkParams m;
  NetworkParams v;
  std::int64_t step = 0;

  static AdamState for_params(const NetworkParams& params);
};

/// One bias-corrected Adam update, in place. Throws NumericError naming the
/// offending tensor if a gradient entry is not finite; params and state are
/// left untouched in that case.
void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state,
               const AdamConfig& config);

struct EmaParams {
  NetworkParams shadow;
  double decay = 0.999;

  static EmaParams track(const NetworkParams& params, double decay);
};

/// shadow <- decay * shadow + (1 - decay) * params.
void ema_update(EmaParams& ema, const NetworkParams& params);

}  // namespace trace::nn
