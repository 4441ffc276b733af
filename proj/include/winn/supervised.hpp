#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "winn/classification.hpp"
#include "winn/pool.hpp"
#include "winn/synthesis.hpp"

namespace winn {

struct Prediction {
  std::vector<int> labels;
  Tensor logits;  // [N,K]
};

/// Argmax over the class logits; ties go to the lowest class index.
inline Prediction classify(const ModelParams& params, const ArchitectureSpec& spec, const Tensor& x) {
  Prediction p;
  p.logits = eval_logits(params, spec, x);
  const std::size_t n = p.logits.dim(0), k = p.logits.dim(1);
  p.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (p.logits[i * k + j] > p.logits[i * k + best]) best = j;
    p.labels[i] = static_cast<int>(best);
  }
  return p;
}

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// x' = clip(x + eps * sign(g), -1, 1) with sign(0) = 0.
inline Tensor fgsm_step(const Tensor& x, const Tensor& grad, double epsilon) {
  if (!(epsilon >= 0.0)) throw UsageError("fgsm: epsilon must be >= 0");
  if (x.shape() != grad.shape()) throw UsageError("fgsm: gradient shape differs from the input");
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(x[i] + epsilon * sign0(grad[i]), -1.0, 1.0);
  return out;
}

/// Input gradient of the softmax cross-entropy of the true labels.
inline Tensor cross_entropy_input_grad(const ModelParams& params, const ArchitectureSpec& spec, const Tensor& x,
                                       std::span<const int> labels) {
  Tape tape;
  auto vars = params.bind(tape, false);
  Var xv = tape.leaf(x, "input");
  Var loss = softmax_cross_entropy(*forward(spec, vars, xv, Mode::Eval).logits, labels);
  return tape.grad(loss, std::span<const Var>(&xv, 1), false)[0].value();
}

inline Tensor fgsm(const ModelParams& params, const ArchitectureSpec& spec, const Tensor& x,
                   std::span<const int> labels, double epsilon) {
  if (!(epsilon >= 0.0)) throw UsageError("fgsm: epsilon must be >= 0");
  return fgsm_step(x, cross_entropy_input_grad(params, spec, x, labels), epsilon);
}

struct AttackReport {
  std::size_t n = 0;
  std::size_t n_a = 0;   // adversarial examples misclassified by A
  std::size_t n_ab = 0;  // of those, also misclassified by B
  double adversarial_error = 0.0;  // n_a / n
  double correction_rate = 0.0;    // 1 - n_ab / n_a (1 when A makes no mistakes)
};

inline AttackReport make_attack_report(std::size_t n, std::size_t n_a, std::size_t n_ab) {
  if (n_ab > n_a || n_a > n) throw UsageError("attack report: counts must satisfy n_ab <= n_a <= n");
  AttackReport r{n, n_a, n_ab, 0.0, 1.0};
  if (n > 0) r.adversarial_error = static_cast<double>(n_a) / static_cast<double>(n);
  if (n_a > 0) r.correction_rate = 1.0 - static_cast<double>(n_ab) / static_cast<double>(n_a);
  return r;
}

using LabelFn = std::function<std::vector<int>(const Tensor&)>;

inline LabelFn label_fn(const ModelParams& params, const ArchitectureSpec& spec) {
  return [&params, &spec](const Tensor& x) { return classify(params, spec, x).labels; };
}

/// FGSM examples are crafted against A; counts follow the definitions of adversarial error and
/// correction rate. Work proceeds in chunks of `chunk` test points.
inline AttackReport evaluate_attack(const ModelParams& a_params, const ArchitectureSpec& a_spec, const LabelFn& b,
                                    const Tensor& x, std::span<const int> labels, double epsilon,
                                    std::size_t chunk = 250) {
  if (x.shape().empty() || x.dim(0) == 0) throw UsageError("evaluate_attack: empty test set");
  if (labels.size() != x.dim(0)) throw UsageError("evaluate_attack: label count differs from the test set");
  std::size_t n_a = 0, n_ab = 0;
  for (std::size_t start = 0; start < x.dim(0); start += chunk) {
    const std::size_t nb = std::min(chunk, x.dim(0) - start);
    std::vector<std::size_t> idx(nb);
    for (std::size_t i = 0; i < nb; ++i) idx[i] = start + i;
    Tensor xs(batch_shape(nb, Shape(x.shape().begin() + 1, x.shape().end())));
    std::copy_n(x.data() + start * x.row_size(), nb * x.row_size(), xs.data());
    std::span<const int> ys = labels.subspan(start, nb);
    const Tensor adv = fgsm(a_params, a_spec, xs, ys, epsilon);
    const auto pa = classify(a_params, a_spec, adv).labels;
    const auto pb = b(adv);
    for (std::size_t i = 0; i < nb; ++i)
      if (pa[i] != ys[i]) {
        ++n_a;
        n_ab += pb[i] != ys[i];
      }
  }
  return make_attack_report(x.dim(0), n_a, n_ab);
}

inline AttackReport evaluate_attack(const ModelParams& a_params, const ArchitectureSpec& a_spec,
                                    const ModelParams& b_params, const ArchitectureSpec& b_spec, const Tensor& x,
                                    std::span<const int> labels, double epsilon) {
  return evaluate_attack(a_params, a_spec, label_fn(b_params, b_spec), x, labels, epsilon);
}

inline double error_rate(const ModelParams& params, const ArchitectureSpec& spec, const Tensor& x,
                         std::span<const int> labels) {
  if (labels.empty()) throw UsageError("error_rate: empty test set");
  const auto pred = classify(params, spec, x).labels;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += pred[i] != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Supervised training: plain cross-entropy baseline or cross-entropy + weight * (W + lambda * P)
// against self-synthesized pseudo-negatives.

struct SupervisedSettings {
  std::size_t stages = 10;
  std::size_t steps_per_stage = 100;
  std::size_t batch = 64;
  double weight = 0.01;  // 0: baseline, no synthesis
  double lambda = 10.0;
  AdamSettings adam{1e-3, 0.0, 0.9, 1e-8};
  SynthesisConfig synthesis{InitMode::Gaussian, 0.3, {0.02, 0.9, 0.99, 1e-8}, 200};
  std::size_t per_stage = 100;
  std::size_t initial_negatives = 100;
  std::size_t pool_cap = 10000;
  std::size_t threshold_batch = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (stages < 1 || steps_per_stage < 1 || batch < 1) throw ConfigError("supervised: stages, steps and batch must be >= 1");
    if (!(weight >= 0.0)) throw ConfigError("supervised.weight must be >= 0");
    if (!(lambda >= 0.0)) throw ConfigError("supervised.lambda must be >= 0");
    if (!(adam.lr > 0.0)) throw ConfigError("supervised.lr must be > 0");
    if (weight > 0.0) {
      if (per_stage < 1 || initial_negatives < 1 || pool_cap < 1 || threshold_batch < 1)
        throw ConfigError("supervised: synthesis counts must be >= 1");
      synthesis.validate();
    }
  }
};

struct SupervisedStage {
  std::size_t stage = 0;
  std::vector<LossReport> steps;
  double threshold = std::numeric_limits<double>::quiet_NaN();
  std::size_t pool_size = 0;
};

struct SupervisedResult {
  ModelParams params;
  AdamState adam;
  PseudoNegativePool pool;
  std::vector<SupervisedStage> stages;
};

/// Both modes draw the identical positive batch sequence, so the baseline differs from WINN
/// training only by the pseudo-negative term.
inline SupervisedResult train_supervised(const ArchitectureSpec& spec, const SupervisedSettings& s, const Tensor& x,
                                         std::span<const int> labels,
                                         const std::function<void(const SupervisedStage&)>& on_stage = {}) {
  s.validate();
  if (spec.classes < 2) throw ConfigError("train_supervised: " + spec.name + " has no class head");
  if (x.shape().empty() || x.dim(0) == 0 || labels.size() != x.dim(0))
    throw UsageError("train_supervised: need a non-empty labeled training set");
  const bool winn = s.weight > 0.0;
  SupervisedResult res;
  res.params = init_params(spec, derive_seed(s.seed, Stream::ParamInit));
  res.adam = make_adam(res.params, s.adam);
  res.pool = PseudoNegativePool(spec.input_shape);
  if (winn)
    res.pool.append(init_samples(s.synthesis, s.initial_negatives, spec.input_shape,
                                 derive_seed(s.seed, Stream::SynthesisInit, 0)),
                    0, 0);
  const Shape sample_shape = spec.input_shape;
  for (std::size_t t = 1; t <= s.stages; ++t) {
    SupervisedStage rec;
    rec.stage = t;
    Rng pos_rng = make_rng(s.seed, Stream::PositiveBatches, t);
    Rng neg_rng = make_rng(s.seed, Stream::PoolBatches, t);
    Rng cap_rng = make_rng(s.seed, Stream::PoolCap, t);
    const std::vector<std::size_t> eligible = winn ? res.pool.capped_subset(s.pool_cap, cap_rng) : std::vector<std::size_t>{};
    for (std::size_t it = 0; it < s.steps_per_stage; ++it) {
      std::vector<std::size_t> idx(s.batch);
      std::vector<int> y(s.batch);
      for (std::size_t i = 0; i < s.batch; ++i) {
        idx[i] = uniform_index(pos_rng, x.dim(0));
        y[i] = labels[idx[i]];
      }
      Tensor xp(batch_shape(s.batch, sample_shape));
      for (std::size_t i = 0; i < s.batch; ++i) std::copy_n(x.data() + idx[i] * xp.row_size(), xp.row_size(), xp.row(i).begin());
      const std::uint64_t dropout_seed = pos_rng();
      LossAndGrads lg;
      if (winn) {
        const Tensor xn = res.pool.sample_from(eligible, s.batch, neg_rng);
        const auto alpha = detail::draw_alpha(s.batch, neg_rng);
        lg = supervised_loss(res.params, spec, xp, y, xn, alpha, s.weight, s.lambda, Mode::Train, dropout_seed);
      } else {
        lg = supervised_loss(res.params, spec, xp, y, xp, {}, 0.0, 0.0, Mode::Train, dropout_seed);
      }
      adam_step(res.adam, res.params, lg.grads);
      rec.steps.push_back(lg.report);
    }
    if (winn) {
      Rng thr_rng = make_rng(s.seed, Stream::Threshold, t);
      std::vector<std::size_t> idx(s.threshold_batch);
      for (auto& i : idx) i = uniform_index(thr_rng, x.dim(0));
      Tensor ref(batch_shape(idx.size(), sample_shape));
      for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(x.data() + idx[i] * ref.row_size(), ref.row_size(), ref.row(i).begin());
      const Tensor f_pos = eval_f(res.params, spec, ref, Mode::Eval);
      rec.threshold = early_stop_threshold(f_pos.values(), thr_rng);
      const SynthesisResult syn = synthesize(res.params, spec, s.synthesis, s.per_stage, rec.threshold,
                                             derive_seed(s.seed, Stream::SynthesisInit, t));
      res.pool.append(syn.samples, t, 0);
    }
    rec.pool_size = res.pool.size();
    if (on_stage) on_stage(rec);
    res.stages.push_back(std::move(rec));
  }
  return res;
}

}  // namespace winn
