#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "winn/model_params.hpp"

namespace winn {

struct AdamSettings {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

struct AdamState {
  AdamSettings settings;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState& a, const AdamState& b) {
    return a.settings.lr == b.settings.lr && a.settings.beta1 == b.settings.beta1 &&
           a.settings.beta2 == b.settings.beta2 && a.settings.eps == b.settings.eps && a.m == b.m && a.v == b.v &&
           a.step == b.step;
  }
};

inline AdamState make_adam(const ModelParams& params, AdamSettings settings) {
  AdamState s;
  s.settings = settings;
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.value.shape());
    s.v.emplace_back(e.value.shape());
  }
  return s;
}

/// One bias-corrected Adam update of `x` in place. direction = -1 descends, +1 ascends.
inline void adam_update(std::span<double> x, std::span<double> m, std::span<double> v, std::span<const double> g,
                        std::uint64_t step, const AdamSettings& s, double direction = -1.0) {
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
    const double mh = m[i] / c1;
    const double vh = v[i] / c2;
    x[i] += direction * s.lr * mh / (std::sqrt(vh) + s.eps);
  }
}

/// Descends `params` along `grads`. Non-finite gradients abort the step with nothing modified.
inline void adam_step(AdamState& state, ModelParams& params, const ParamGrads& grads) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw UsageError("adam_step: gradient/state count does not match parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape())
      throw UsageError("adam_step: gradient shape mismatch for '" + params[i].name + "'");
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient for '" + params[i].name + "'");
  }
  ++state.step;
  for (std::size_t i = 0; i < grads.size(); ++i)
    adam_update(params[i].value.values(), state.m[i].values(), state.v[i].values(), grads[i].values(), state.step,
                state.settings, -1.0);
}

}  // namespace winn
