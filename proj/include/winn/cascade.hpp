#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "winn/classification.hpp"
#include "winn/pool.hpp"
#include "winn/synthesis.hpp"

namespace winn {

struct TrainSettings {
  ClassifierSettings classifier;
  AdamSettings adam;  // classifier optimizer
  SynthesisConfig synthesis;
  std::size_t stages = 10;           // T per cascade
  std::size_t cascades = 1;          // K
  std::size_t per_stage = 100;       // r new pseudo-negatives per stage
  std::size_t initial_negatives = 100;
  std::size_t pool_cap = 10000;
  std::size_t threshold_batch = 100;
  std::size_t energy_reference = 0;  // positives kept for per-stage energy distance; 0 disables
  bool warm_start = false;           // cascade k starts from cascade k-1's weights
  std::uint64_t seed = 0;
  std::size_t stop_after_stage = 0;  // stop once this many stages ran in total (0: run to the end)

  void validate() const {
    if (stages < 1) throw ConfigError("cascade.stages must be >= 1");
    if (cascades < 1) throw ConfigError("cascade.cascades must be >= 1");
    if (per_stage < 1) throw ConfigError("cascade.per_stage must be >= 1");
    if (initial_negatives < 1) throw ConfigError("cascade.initial_negatives must be >= 1");
    if (pool_cap < 1) throw ConfigError("cascade.pool_cap must be >= 1");
    if (threshold_batch < 1) throw ConfigError("cascade.threshold_batch must be >= 1");
    if (energy_reference == 1) throw ConfigError("cascade.energy_reference must be 0 or >= 2");
    if (classifier.batch_pos < 1 || classifier.batch_neg < 1) throw ConfigError("classifier batch sizes must be >= 1");
    if (!(adam.lr > 0.0)) throw ConfigError("classifier.lr must be > 0");
    if (synthesis.init == InitMode::PreviousSamples)
      throw ConfigError("synthesis.init = previous is reserved for later cascades");
    synthesis.validate();
  }
};

/// Everything needed to continue training at a stage boundary.
struct TrainState {
  std::size_t cascade = 0;  // current cascade, 0-based
  std::size_t stage = 0;    // stages completed in the current cascade
  ModelParams params;
  AdamState adam;
  PseudoNegativePool pool;
  std::vector<ModelParams> finished;            // classifiers of completed cascades
  std::vector<PseudoNegativePool> finished_pools;
  Tensor previous_final;                        // last-stage samples of the previous cascade

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct StageRecord {
  std::size_t cascade = 0;
  std::size_t stage = 0;  // 1-based within the cascade
  std::vector<LossReport> steps;
  std::size_t eligible = 0;   // pool items the classification step could draw from
  double threshold = 0.0;
  double f_pos_min = 0.0;
  double f_pos_max = 0.0;
  SynthesisResult synthesis;
  std::size_t pool_size = 0;  // after appending this stage's samples
  double energy = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
};

struct TrainHooks {
  std::function<void(const StageRecord&, const TrainState&)> on_stage;
};

struct TrainResult {
  TrainState state;
  std::vector<StageRecord> records;  // synthesis samples dropped; they live in the pool
  bool finished = false;
};

namespace detail {

inline std::uint64_t stage_index(std::size_t cascade, std::size_t stage) {
  return (static_cast<std::uint64_t>(cascade) << 32) | static_cast<std::uint64_t>(stage);
}

inline Rng stage_rng(const TrainSettings& s, Stream stream, std::size_t cascade, std::size_t stage) {
  return make_rng(s.seed, stream, stage_index(cascade, stage));
}

inline SynthesisConfig cascade_synthesis(const TrainSettings& s, std::size_t cascade) {
  SynthesisConfig cfg = s.synthesis;
  if (cascade > 0) cfg.init = InitMode::PreviousSamples;
  return cfg;
}

inline const Tensor* previous_or_null(const TrainState& st) {
  return st.cascade > 0 ? &st.previous_final : nullptr;
}

/// Fresh classifier, optimizer and stage-0 pool for `st.cascade`.
inline void begin_cascade(TrainState& st, const ArchitectureSpec& spec, const TrainSettings& s,
                          const ModelParams* warm) {
  if (st.cascade > 0 && (st.previous_final.shape().empty() || st.previous_final.dim(0) == 0))
    throw ConfigError("cascade " + std::to_string(st.cascade + 1) + " needs samples from the previous cascade");
  st.params = warm ? *warm : init_params(spec, derive_seed(s.seed, Stream::ParamInit, st.cascade));
  st.adam = make_adam(st.params, s.adam);
  st.pool = PseudoNegativePool(spec.input_shape);
  st.stage = 0;
  const SynthesisConfig cfg = cascade_synthesis(s, st.cascade);
  st.pool.append(init_samples(cfg, s.initial_negatives, spec.input_shape,
                              derive_seed(s.seed, Stream::SynthesisInit, stage_index(st.cascade, 0)),
                              previous_or_null(st)),
                 0, st.cascade);
}

}  // namespace detail

inline TrainState initial_state(const ArchitectureSpec& spec, const TrainSettings& s) {
  s.validate();
  TrainState st;
  detail::begin_cascade(st, spec, s, nullptr);
  return st;
}

/// One reclassification-by-synthesis stage: k classification iterations against the (capped) pool,
/// a threshold from fresh positives, r synthesized samples appended to the pool.
inline StageRecord run_stage(TrainState& st, const ArchitectureSpec& spec, const TrainSettings& s,
                             const BatchSampler& positives) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t c = st.cascade, t = st.stage + 1;
  StageRecord rec;
  rec.cascade = c;
  rec.stage = t;

  Rng cap_rng = detail::stage_rng(s, Stream::PoolCap, c, t);
  const std::vector<std::size_t> eligible = st.pool.capped_subset(s.pool_cap, cap_rng);
  rec.eligible = eligible.size();
  const BatchSampler negatives = [&](std::size_t n, Rng& rng) { return st.pool.sample_from(eligible, n, rng); };
  Rng cls_rng = detail::stage_rng(s, Stream::PositiveBatches, c, t);
  rec.steps = classification_step(st.params, spec, positives, negatives, s.classifier, st.adam, cls_rng);

  Rng thr_rng = detail::stage_rng(s, Stream::Threshold, c, t);
  const Tensor ref = detail::draw(positives, s.threshold_batch, thr_rng, "positive");
  const Tensor f_pos = eval_f(st.params, spec, ref, Mode::Eval, 0);
  const auto [lo, hi] = std::minmax_element(f_pos.values().begin(), f_pos.values().end());
  rec.f_pos_min = *lo;
  rec.f_pos_max = *hi;
  rec.threshold = early_stop_threshold(f_pos.values(), thr_rng);

  const SynthesisConfig cfg = detail::cascade_synthesis(s, c);
  rec.synthesis = synthesize(st.params, spec, cfg, s.per_stage, rec.threshold,
                             derive_seed(s.seed, Stream::SynthesisInit, detail::stage_index(c, t)),
                             detail::previous_or_null(st));
  st.pool.append(rec.synthesis.samples, t, c);
  st.stage = t;
  rec.pool_size = st.pool.size();
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

/// Runs (or resumes) the cascade schedule. Every stage draws from streams derived from
/// (seed, cascade, stage), so a run resumed from a stage boundary is bit-identical to an
/// uninterrupted one.
inline TrainResult run_training(const ArchitectureSpec& spec, const TrainSettings& s, const BatchSampler& positives,
                                std::optional<TrainState> resume = std::nullopt, const TrainHooks& hooks = {}) {
  s.validate();
  TrainResult res;
  res.state = resume ? std::move(*resume) : initial_state(spec, s);
  TrainState& st = res.state;
  std::optional<Tensor> energy_ref;
  if (s.energy_reference > 0) {
    Rng r = make_rng(s.seed, Stream::Evaluation);
    energy_ref = detail::draw(positives, s.energy_reference, r, "positive");
  }
  std::size_t ran = 0;
  while (true) {
    if (st.stage == s.stages) {
      if (st.cascade + 1 >= s.cascades) break;
      st.previous_final = st.pool.stage_samples(s.stages);
      st.finished.push_back(st.params);
      st.finished_pools.push_back(std::move(st.pool));
      ++st.cascade;
      detail::begin_cascade(st, spec, s, s.warm_start ? &st.finished.back() : nullptr);
    }
    if (s.stop_after_stage > 0 && ran == s.stop_after_stage) return res;
    StageRecord rec = run_stage(st, spec, s, positives);
    if (energy_ref) rec.energy = energy_distance(rec.synthesis.samples, *energy_ref);
    ++ran;
    if (hooks.on_stage) hooks.on_stage(rec, st);
    rec.synthesis.samples = Tensor();
    res.records.push_back(std::move(rec));
  }
  res.finished = true;
  return res;
}

inline TrainResult train_single(const ArchitectureSpec& spec, TrainSettings s, const BatchSampler& positives,
                                const TrainHooks& hooks = {}) {
  s.cascades = 1;
  return run_training(spec, s, positives, std::nullopt, hooks);
}

inline TrainResult train_cascade(const ArchitectureSpec& spec, TrainSettings s, const BatchSampler& positives,
                                 std::size_t cascades, const TrainHooks& hooks = {}) {
  s.cascades = cascades;
  return run_training(spec, s, positives, std::nullopt, hooks);
}

/// All trained classifiers of a finished run, in cascade order.
inline std::vector<ModelParams> cascade_models(const TrainState& st) {
  std::vector<ModelParams> out = st.finished;
  out.push_back(st.params);
  return out;
}

struct SeparationReport {
  double threshold = 0.0;  // cut maximizing balanced accuracy on the calibration sets
  double accuracy = 0.0;   // balanced over the two test sets
  double positive_accuracy = 0.0;
  double negative_accuracy = 0.0;
};

/// Cut tau maximizing (P(f_pos >= tau) + P(f_neg < tau)) / 2; candidates are midpoints between
/// adjacent pooled scores, ties go to the smallest cut.
inline double balanced_cut(std::vector<double> pos, std::vector<double> neg) {
  if (pos.empty() || neg.empty()) throw UsageError("balanced_cut: need both score sets");
  std::vector<std::pair<double, int>> all;
  for (double v : pos) all.emplace_back(v, 1);
  for (double v : neg) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end());
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  // Cut below everything: every positive is accepted, no negative rejected.
  double best = 0.5, tau = all.front().first - 1.0;
  double pos_below = 0.0, neg_below = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    (all[i].second ? pos_below : neg_below) += 1.0;
    if (i + 1 < all.size() && all[i + 1].first == all[i].first) continue;
    const double cut = i + 1 < all.size() ? 0.5 * (all[i].first + all[i + 1].first) : all[i].first + 1.0;
    const double acc = 0.5 * ((np - pos_below) / np + neg_below / nn);
    if (acc > best) best = acc, tau = cut;
  }
  return tau;
}

/// Positive-vs-noise separation: the cut is fitted on calibration sets, accuracy measured on test sets.
inline SeparationReport separation_accuracy(const ModelParams& params, const ArchitectureSpec& spec,
                                            const Tensor& cal_pos, const Tensor& cal_neg, const Tensor& test_pos,
                                            const Tensor& test_neg) {
  auto scores = [&](const Tensor& x) {
    const Tensor f = eval_f(params, spec, x, Mode::Eval, 0);
    return std::vector<double>(f.values().begin(), f.values().end());
  };
  auto frac = [&](const Tensor& x, bool above, double tau) {
    const Tensor f = eval_f(params, spec, x, Mode::Eval, 0);
    std::size_t ok = 0;
    for (double v : f.values()) ok += above ? (v >= tau) : (v < tau);
    return static_cast<double>(ok) / static_cast<double>(f.numel());
  };
  SeparationReport r;
  r.threshold = balanced_cut(scores(cal_pos), scores(cal_neg));
  r.positive_accuracy = frac(test_pos, true, r.threshold);
  r.negative_accuracy = frac(test_neg, false, r.threshold);
  r.accuracy = 0.5 * (r.positive_accuracy + r.negative_accuracy);
  return r;
}

}  // namespace winn
