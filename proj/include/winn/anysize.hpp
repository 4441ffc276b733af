#pragma once

#include <cassert>
#include <vector>

#include "winn/synthesis.hpp"

namespace winn {

/// How patch top-left corners are drawn on a square canvas of side W for patches of side P.
/// Toroidal: uniform over [0,W) with wrap-around, so every canvas pixel has coverage P^2/W^2.
/// Clamped: uniform over [0,W-P], patches never wrap; pixels within P-1 of the border are covered less.
enum class PatchMode { Toroidal, Clamped };

inline const char* patch_mode_name(PatchMode m) { return m == PatchMode::Toroidal ? "toroidal" : "clamped"; }
inline PatchMode parse_patch_mode(const std::string& s) {
  if (s == "toroidal") return PatchMode::Toroidal;
  if (s == "clamped") return PatchMode::Clamped;
  throw ConfigError("patch mode: expected toroidal or clamped, got '" + s + "'");
}

struct PatchLocation {
  std::size_t y = 0;
  std::size_t x = 0;
};

class PatchSampler {
 public:
  PatchSampler(std::size_t working, std::size_t patch, PatchMode mode) : working_(working), patch_(patch), mode_(mode) {
    if (patch == 0 || working < patch)
      throw ConfigError("anysize: working size " + std::to_string(working) + " must be >= patch size " +
                        std::to_string(patch));
  }

  PatchLocation operator()(Rng& rng) const {
    const std::size_t range = mode_ == PatchMode::Toroidal ? working_ : working_ - patch_ + 1;
    const std::size_t y = uniform_index(rng, range);
    const std::size_t x = uniform_index(rng, range);
    return {y, x};
  }

  /// Canvas row/column of patch offset `d` from corner coordinate `c`.
  std::size_t wrap(std::size_t c, std::size_t d) const {
    const std::size_t v = c + d;
    assert(mode_ == PatchMode::Toroidal || v < working_);
    return v % working_;
  }

  std::size_t working() const noexcept { return working_; }
  std::size_t patch() const noexcept { return patch_; }
  PatchMode mode() const noexcept { return mode_; }

 private:
  std::size_t working_, patch_;
  PatchMode mode_;
};

/// Copies patches [K,C,P,P] out of a canvas [C,W,W].
inline Tensor extract_patches(const Tensor& canvas, const PatchSampler& s, std::span<const PatchLocation> locs) {
  const std::size_t c = canvas.dim(0), w = canvas.dim(1), p = s.patch();
  Tensor out({locs.size(), c, p, p});
  for (std::size_t k = 0; k < locs.size(); ++k)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t a = 0; a < p; ++a) {
        const std::size_t y = s.wrap(locs[k].y, a);
        for (std::size_t b = 0; b < p; ++b)
          out[((k * c + ch) * p + a) * p + b] = canvas[(ch * w + y) * w + s.wrap(locs[k].x, b)];
      }
  return out;
}

/// Per-pixel mean of the patch gradients that cover it; zero where no patch lands.
inline Tensor average_patch_gradients(const Shape& canvas_shape, const PatchSampler& s,
                                      std::span<const PatchLocation> locs, const Tensor& patch_grads) {
  const std::size_t c = canvas_shape[0], w = canvas_shape[1], p = s.patch();
  Tensor sum(canvas_shape);
  std::vector<std::size_t> count(w * w, 0);
  for (std::size_t k = 0; k < locs.size(); ++k)
    for (std::size_t a = 0; a < p; ++a) {
      const std::size_t y = s.wrap(locs[k].y, a);
      for (std::size_t b = 0; b < p; ++b) {
        const std::size_t x = s.wrap(locs[k].x, b);
        ++count[y * w + x];
        for (std::size_t ch = 0; ch < c; ++ch)
          sum[(ch * w + y) * w + x] += patch_grads[((k * c + ch) * p + a) * p + b];
      }
    }
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < w * w; ++i)
      if (count[i] > 0) sum[ch * w * w + i] /= static_cast<double>(count[i]);
  return sum;
}

struct AnysizeConfig {
  std::size_t working = 320;
  std::size_t center = 256;
  std::size_t patches_per_iter = 200;
  std::size_t iters = 200;
  PatchMode mode = PatchMode::Toroidal;
  double sigma = 0.3;
  AdamSettings adam{0.01, 0.9, 0.99, 1e-8};
  std::size_t score_chunk = 50;  // patches per network call

  void validate(const ArchitectureSpec& spec) const {
    if (spec.input_shape.size() != 3 || spec.input_shape[1] != spec.input_shape[2])
      throw ConfigError("anysize: model input must be square {C,P,P}, got " + to_string(spec.input_shape));
    if (working < spec.input_shape[1]) throw ConfigError("anysize: working size smaller than the patch size");
    if (center > working || (working - center) % 2) throw ConfigError("anysize: center crop must fit symmetrically");
    if (patches_per_iter == 0 || iters == 0 || score_chunk == 0) throw ConfigError("anysize: counts must be >= 1");
  }
};

struct AnysizeResult {
  Tensor image;    // [C, center, center], clipped to [-1,1]
  Tensor working;  // final canvas before clipping
  std::vector<double> mean_patch_score;  // per iteration
};

inline Tensor center_crop(const Tensor& canvas, std::size_t center) {
  const std::size_t c = canvas.dim(0), w = canvas.dim(1), off = (w - center) / 2;
  Tensor out({c, center, center});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < center; ++y)
      for (std::size_t x = 0; x < center; ++x)
        out[(ch * center + y) * center + x] = canvas[(ch * w + y + off) * w + x + off];
  return out;
}

/// Grows one large image with a patch model: each iteration scores randomly placed patches of the
/// clipped canvas, averages their input gradients per pixel and takes one Adam ascent step.
template <class Scorer>
AnysizeResult anysize_synthesize(Scorer&& scorer, const Shape& patch_shape, const AnysizeConfig& cfg,
                                 std::uint64_t seed) {
  const std::size_t c = patch_shape[0];
  const PatchSampler sampler(cfg.working, patch_shape[1], cfg.mode);
  Rng init_rng = make_rng(seed, Stream::SynthesisInit);
  Rng loc_rng = make_rng(seed, Stream::PatchSampler);
  AnysizeResult res;
  Tensor canvas = gaussian_tensor({c, cfg.working, cfg.working}, cfg.sigma, init_rng);
  Tensor m(canvas.shape()), v(canvas.shape());
  for (std::size_t it = 1; it <= cfg.iters; ++it) {
    std::vector<PatchLocation> locs(cfg.patches_per_iter);
    for (auto& l : locs) l = sampler(loc_rng);
    const Tensor view = clipped(canvas);
    Tensor grads({locs.size(), c, sampler.patch(), sampler.patch()});
    double score_sum = 0.0;
    for (std::size_t start = 0; start < locs.size(); start += cfg.score_chunk) {
      const std::size_t nb = std::min(cfg.score_chunk, locs.size() - start);
      std::span<const PatchLocation> part(locs.data() + start, nb);
      const ScoreAndGrad sg = scorer(extract_patches(view, sampler, part));
      for (double f : sg.scores.values()) score_sum += f;
      std::copy_n(sg.input_grad.data(), sg.input_grad.numel(), grads.data() + start * grads.row_size());
    }
    res.mean_patch_score.push_back(score_sum / static_cast<double>(locs.size()));
    const Tensor g = average_patch_gradients(canvas.shape(), sampler, locs, grads);
    adam_update(canvas.values(), m.values(), v.values(), g.values(), it, cfg.adam, +1.0);
    if (!canvas.all_finite()) throw NumericError("anysize: canvas became non-finite at iteration " + std::to_string(it));
  }
  res.working = canvas;
  res.image = clipped(center_crop(canvas, cfg.center));
  return res;
}

inline AnysizeResult anysize_synthesize(const ModelParams& params, const ArchitectureSpec& spec,
                                        const AnysizeConfig& cfg, std::uint64_t seed) {
  cfg.validate(spec);
  return anysize_synthesize(network_scorer(params, spec, false, seed), spec.input_shape, cfg, seed);
}

}  // namespace winn
