#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "winn/adam.hpp"
#include "winn/net_zoo.hpp"

namespace winn {

enum class InitMode { Gaussian, AltInitializer, PreviousSamples };
enum class NoiseMode { None, Langevin };

inline const char* init_mode_name(InitMode m) {
  switch (m) {
    case InitMode::Gaussian: return "gaussian";
    case InitMode::AltInitializer: return "alt_initializer";
    case InitMode::PreviousSamples: return "previous";
  }
  return "?";
}
inline InitMode parse_init_mode(const std::string& s) {
  if (s == "gaussian") return InitMode::Gaussian;
  if (s == "alt_initializer") return InitMode::AltInitializer;
  if (s == "previous") return InitMode::PreviousSamples;
  throw ConfigError("synthesis init: expected gaussian, alt_initializer or previous, got '" + s + "'");
}
inline const char* noise_mode_name(NoiseMode m) { return m == NoiseMode::None ? "none" : "langevin"; }
inline NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "none") return NoiseMode::None;
  if (s == "langevin") return NoiseMode::Langevin;
  throw ConfigError("synthesis noise: expected none or langevin, got '" + s + "'");
}

/// Step size eps_t = max(floor, eps0 * decay^(t-1)); the noise has variance eps_t * scale^2.
struct LangevinSchedule {
  double epsilon0 = 0.01;
  double decay = 1.0;
  double floor = 0.0;
  double noise_scale = 1.0;

  double epsilon(std::size_t step) const {
    return std::max(floor, epsilon0 * std::pow(decay, static_cast<double>(step - 1)));
  }
};

struct SynthesisConfig {
  InitMode init = InitMode::Gaussian;
  double sigma = 0.3;
  AdamSettings adam{0.01, 0.9, 0.99, 1e-8};
  std::size_t max_steps = 200;
  NoiseMode noise = NoiseMode::None;
  LangevinSchedule langevin;
  bool dropout = false;  // run the network in train mode while ascending
  double divergence_limit = 1e3;
  std::uint64_t alt_initializer_seed = 0;

  void validate() const {
    if (max_steps < 1) throw ConfigError("synthesis.max_steps must be >= 1");
    if (init == InitMode::Gaussian && !(sigma > 0.0)) throw ConfigError("synthesis.sigma must be > 0");
    if (!(adam.lr > 0.0)) throw ConfigError("synthesis.lr must be > 0");
    if (noise == NoiseMode::Langevin && !(langevin.epsilon0 > 0.0))
      throw ConfigError("synthesis.langevin_epsilon must be > 0");
  }
};

struct SynthesisResult {
  Tensor samples;                      // clipped to [-1,1]
  std::vector<std::size_t> stop_step;  // number of score evaluations used
  std::vector<double> final_score;     // f at the emitted sample
  std::vector<double> threshold;
  std::vector<bool> budget_exhausted;
  std::vector<bool> reinitialized;
};

/// Initial synthesis batch. `previous` supplies the pool for InitMode::PreviousSamples.
inline Tensor init_samples(const SynthesisConfig& cfg, std::size_t count, const Shape& shape, std::uint64_t seed,
                           const Tensor* previous = nullptr) {
  Rng rng = make_rng(seed, Stream::SynthesisInit);
  switch (cfg.init) {
    case InitMode::Gaussian:
      if (!(cfg.sigma > 0.0)) throw ConfigError("synthesis.sigma must be > 0");
      return gaussian_tensor(batch_shape(count, shape), cfg.sigma, rng);
    case InitMode::AltInitializer: {
      if (shape != AltInitializer::output_shape())
        throw ConfigError("alt_initializer produces " + to_string(AltInitializer::output_shape()) +
                          " images, model expects " + to_string(shape));
      if (count == 0) return Tensor(batch_shape(0, shape));
      return AltInitializer(cfg.alt_initializer_seed).generate(count, rng);
    }
    case InitMode::PreviousSamples: {
      if (previous == nullptr || previous->shape().empty() || previous->shape()[0] == 0)
        throw ConfigError("synthesis init 'previous' needs samples from the previous cascade");
      if (Shape(previous->shape().begin() + 1, previous->shape().end()) != shape)
        throw ConfigError("previous-cascade samples have shape " + to_string(previous->shape()) + ", model expects " +
                          to_string(shape));
      Tensor out(batch_shape(count, shape));
      const std::size_t rs = out.row_size();
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = uniform_index(rng, previous->shape()[0]);
        std::copy_n(previous->row(j).begin(), rs, out.row(i).begin());
      }
      return out;
    }
  }
  return {};
}

/// u ~ U[min f+, max f+].
inline double early_stop_threshold(std::span<const double> f_pos, Rng& rng) {
  if (f_pos.empty()) throw UsageError("early_stop_threshold: no positive scores");
  const auto [lo, hi] = std::minmax_element(f_pos.begin(), f_pos.end());
  if (*lo == *hi) return *lo;
  return std::clamp(uniform(rng, *lo, *hi), *lo, *hi);
}

inline Tensor clipped(Tensor t, double lo = -1.0, double hi = 1.0) {
  for (double& v : t.values()) v = std::clamp(v, lo, hi);
  return t;
}

/// Scores f(x) and per-sample input gradients of the network, optionally with dropout active.
inline auto network_scorer(const ModelParams& params, const ArchitectureSpec& spec, bool dropout, std::uint64_t seed) {
  return [&params, &spec, dropout, seed, calls = std::uint64_t{0}](const Tensor& batch) mutable {
    const Mode mode = dropout ? Mode::Train : Mode::Eval;
    return score_and_input_grad(params, spec, batch, mode, derive_seed(seed, Stream::Dropout, calls++));
  };
}

/// Ascends `scorer` from `init`. Each sample is scored at clip(x) (straight-through gradient) and
/// stops the first time its score reaches `threshold`; the budget is `max_steps` evaluations.
/// `reinit(i)` returns a fresh start for sample i after divergence.
template <class Scorer>
SynthesisResult synthesize(Scorer&& scorer, const Tensor& init, double threshold, const SynthesisConfig& cfg,
                           std::uint64_t seed, const std::function<Tensor(std::size_t)>& reinit = {}) {
  cfg.validate();
  if (!std::isfinite(threshold))
    throw UsageError("synthesize: threshold must be finite");
  const std::size_t n = init.shape().at(0);
  const Shape sample_shape(init.shape().begin() + 1, init.shape().end());
  const std::size_t rs = n == 0 ? numel_of(sample_shape) : init.row_size();

  SynthesisResult res;
  res.samples = Tensor(init.shape());
  res.stop_step.assign(n, 0);
  res.final_score.assign(n, 0.0);
  res.threshold.assign(n, threshold);
  res.budget_exhausted.assign(n, false);
  res.reinitialized.assign(n, false);

  Tensor x = init;
  Tensor m(init.shape()), v(init.shape());
  std::vector<std::size_t> adam_step(n, 0);
  std::vector<Rng> noise;
  if (cfg.noise == NoiseMode::Langevin)
    for (std::size_t i = 0; i < n; ++i) noise.push_back(make_rng(seed, Stream::Langevin, i));
  std::vector<std::size_t> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = i;

  for (std::size_t step = 1; step <= cfg.max_steps && !active.empty(); ++step) {
    Tensor batch(batch_shape(active.size(), sample_shape));
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto src = x.row(active[a]);
      auto dst = batch.row(a);
      for (std::size_t j = 0; j < rs; ++j) dst[j] = std::clamp(src[j], -1.0, 1.0);
    }
    const ScoreAndGrad sg = scorer(batch);
    std::vector<std::size_t> still;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t i = active[a];
      const double f = sg.scores[a];
      if (!std::isfinite(f)) throw NumericError("synthesize: non-finite score for sample " + std::to_string(i));
      if (f >= threshold || step == cfg.max_steps) {
        res.stop_step[i] = step;
        res.final_score[i] = f;
        res.budget_exhausted[i] = f < threshold;
        std::copy_n(batch.row(a).begin(), rs, res.samples.row(i).begin());
        continue;
      }
      auto xi = x.row(i);
      auto g = sg.input_grad.row(a);
      if (cfg.noise == NoiseMode::Langevin) {
        // dx = (eps/2) grad f + eta, eta ~ N(0, eps * scale^2)
        const double eps = cfg.langevin.epsilon(step);
        const double sd = std::sqrt(eps) * cfg.langevin.noise_scale;
        for (std::size_t j = 0; j < rs; ++j) {
          xi[j] += 0.5 * eps * g[j];
          if (sd > 0.0) xi[j] += sd * std::normal_distribution<double>(0.0, 1.0)(noise[i]);
        }
      } else {
        adam_update(xi, m.row(i), v.row(i), g, ++adam_step[i], cfg.adam, +1.0);
      }
      bool diverged = false;
      for (double val : xi) diverged |= !(std::abs(val) <= cfg.divergence_limit);
      if (diverged) {
        if (res.reinitialized[i] || !reinit)
          throw NumericError("synthesize: sample " + std::to_string(i) + " diverged (|x| > " +
                             std::to_string(cfg.divergence_limit) + ")" +
                             (res.reinitialized[i] ? " after re-initialization" : ""));
        res.reinitialized[i] = true;
        Tensor fresh = reinit(i);
        std::copy_n(fresh.data(), rs, xi.begin());
        std::fill(m.row(i).begin(), m.row(i).end(), 0.0);
        std::fill(v.row(i).begin(), v.row(i).end(), 0.0);
        adam_step[i] = 0;
      }
      still.push_back(i);
    }
    active = std::move(still);
  }
  return res;
}

/// Network synthesis: draws `count` starts per the config and ascends the network's score.
inline SynthesisResult synthesize(const ModelParams& params, const ArchitectureSpec& spec, const SynthesisConfig& cfg,
                                  std::size_t count, double threshold, std::uint64_t seed,
                                  const Tensor* previous = nullptr) {
  Tensor init = init_samples(cfg, count, spec.input_shape, seed, previous);
  auto reinit = [&](std::size_t i) {
    return init_samples(cfg, 1, spec.input_shape, derive_seed(seed, Stream::SynthesisInit, i + 1), previous);
  };
  return synthesize(network_scorer(params, spec, cfg.dropout, seed), init, threshold, cfg, seed, reinit);
}

}  // namespace winn
