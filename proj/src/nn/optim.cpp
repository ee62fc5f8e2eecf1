#include "trace/nn/optim.hpp"

#include <cmath>

#include "trace/errors.hpp"

namespace trace::nn {

AdamState AdamState::for_params(const NetworkParams& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v))
    throw InvalidArgument("adam_step: shape mismatch");

  const auto g = grads.tensors();
  for (const auto& t : g)
    for (double v : t.values())
      if (!std::isfinite(v)) throw NumericError("adam_step: non-finite gradient in " + t.name);

  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto p = params.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto pv = p[i].values();
    auto mv = m[i].values();
    auto vv = v[i].values();
    auto gv = g[i].values();
    for (std::size_t j = 0; j < pv.size(); ++j) {
      mv[j] = cfg.beta1 * mv[j] + (1.0 - cfg.beta1) * gv[j];
      vv[j] = cfg.beta2 * vv[j] + (1.0 - cfg.beta2) * gv[j] * gv[j];
      pv[j] -= cfg.lr * (mv[j] / c1) / (std::sqrt(vv[j] / c2) + cfg.eps);
    }
  }
}

EmaParams EmaParams::track(const NetworkParams& params, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw InvalidArgument("ema decay must lie in [0,1)");
  return {params, decay};
}

void ema_update(EmaParams& ema, const NetworkParams& params) {
  if (!ema.shadow.same_shape(params)) throw InvalidArgument("ema_update: shape mismatch");
  auto s = ema.shadow.tensors();
  const auto p = params.tensors();
  const double d = ema.decay;
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto sv = s[i].values();
    auto pv = p[i].values();
    for (std::size_t j = 0; j < sv.size(); ++j) sv[j] = d * sv[j] + (1.0 - d) * pv[j];
  }
}

}  // namespace trace::nn
