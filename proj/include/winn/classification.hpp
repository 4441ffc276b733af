#pragma once

#include <functional>
#include <string>
#include <vector>

#include "winn/adam.hpp"
#include "winn/losses.hpp"

namespace winn {

enum class LossKind { Wasserstein, CrossEntropy };

inline const char* loss_kind_name(LossKind k) { return k == LossKind::Wasserstein ? "wasserstein" : "cross_entropy"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "wasserstein") return LossKind::Wasserstein;
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  throw ConfigError("loss: expected wasserstein or cross_entropy, got '" + s + "'");
}

struct ClassifierSettings {
  LossKind loss = LossKind::Wasserstein;
  std::size_t steps = 3;  // k inner iterations per stage
  double lambda = 10.0;
  std::size_t batch_pos = 50;
  std::size_t batch_neg = 50;
};

/// Draws `count` samples as a batch; may consume `rng`.
using BatchSampler = std::function<Tensor(std::size_t count, Rng& rng)>;

struct LossAndGrads {
  LossReport report;
  ParamGrads grads;
};

namespace detail {

inline double mean_value(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s / static_cast<double>(t.numel());
}

/// lambda * penalty on the tape, or nothing when lambda == 0.
inline std::optional<Var> penalty_block(const ArchitectureSpec& spec, std::span<const Var> vars, const Tensor& x_pos,
                                        const Tensor& x_neg, std::span<const double> alpha, Mode mode,
                                        std::uint64_t dropout_seed, LossReport& rep) {
  if (rep.lambda == 0.0) return std::nullopt;
  Tape& tape = vars[0].tape();
  Var x_hat = tape.leaf(interpolate(x_pos, x_neg, alpha), "interpolates");
  const std::uint64_t seed = splitmix64(dropout_seed ^ 0x9e3779b97f4a7c15ULL);
  Var pen = gradient_penalty_term(x_hat, [&](Var x) { return forward(spec, vars, x, mode, seed).f; });
  rep.penalty = pen.value().item();
  return scale(pen, rep.lambda);
}

}  // namespace detail

/// Loss of one classification iteration and its parameter gradient.
/// Wasserstein mode: total = W + lambda * P. Cross-entropy mode: total = CE + lambda * P.
inline LossAndGrads binary_loss(const ModelParams& params, const ArchitectureSpec& spec, const Tensor& x_pos,
                                const Tensor& x_neg, std::span<const double> alpha, LossKind kind, double lambda,
                                Mode mode = Mode::Train, std::uint64_t dropout_seed = 0) {
  Tape tape;
  auto vars = params.bind(tape);
  LossReport rep;
  rep.lambda = lambda;
  Var f_pos = forward(spec, vars, tape.constant(x_pos, "positives"), mode, dropout_seed).f;
  Var f_neg = forward(spec, vars, tape.constant(x_neg, "negatives"), mode, splitmix64(dropout_seed + 1)).f;
  rep.mean_f_pos = detail::mean_value(f_pos.value());
  rep.mean_f_neg = detail::mean_value(f_neg.value());
  Var total = kind == LossKind::Wasserstein ? wasserstein_loss(f_pos, f_neg) : cross_entropy_loss(f_pos, f_neg);
  if (kind == LossKind::Wasserstein) {
    rep.wasserstein = total.value().item();
  } else {
    auto ce = cross_entropy_loss(f_pos.value().values(), f_neg.value().values());
    rep.cross_entropy = ce.value;
    rep.clamped = ce.clamped;
  }
  if (auto pen = detail::penalty_block(spec, vars, x_pos, x_neg, alpha, mode, dropout_seed, rep)) total = add(total, *pen);
  rep.total = total.value().item();
  return {rep, values_of(tape.grad(total, vars))};
}

/// Softmax cross-entropy over labeled positives + weight * (W + lambda * P) against negatives.
inline LossAndGrads supervised_loss(const ModelParams& params, const ArchitectureSpec& spec, const Tensor& x_pos,
                                    std::span<const int> labels, const Tensor& x_neg, std::span<const double> alpha,
                                    double weight, double lambda, Mode mode = Mode::Train,
                                    std::uint64_t dropout_seed = 0) {
  if (spec.classes < 2) throw UsageError("supervised_loss: " + spec.name + " has no class head with K >= 2");
  Tape tape;
  auto vars = params.bind(tape);
  LossReport rep;
  rep.lambda = lambda;
  rep.alpha = weight;
  ForwardOutput pos = forward(spec, vars, tape.constant(x_pos, "positives"), mode, dropout_seed);
  Var total = softmax_cross_entropy(*pos.logits, labels);
  rep.cross_entropy = total.value().item();
  rep.mean_f_pos = detail::mean_value(pos.f.value());
  if (weight != 0.0) {
    Var f_neg = forward(spec, vars, tape.constant(x_neg, "negatives"), mode, splitmix64(dropout_seed + 1)).f;
    rep.mean_f_neg = detail::mean_value(f_neg.value());
    Var w = wasserstein_loss(pos.f, f_neg);
    rep.wasserstein = w.value().item();
    if (auto pen = detail::penalty_block(spec, vars, x_pos, x_neg, alpha, mode, dropout_seed, rep)) w = add(w, *pen);
    total = add(total, scale(w, weight));
  }
  rep.total = total.value().item();
  return {rep, values_of(tape.grad(total, vars))};
}

namespace detail {
inline Tensor draw(const BatchSampler& sampler, std::size_t count, Rng& rng, const char* what) {
  Tensor t = sampler(count, rng);
  if (t.shape().empty() || t.shape()[0] != count)
    throw ConfigError(std::string(what) + " sampler exhausted: asked for " + std::to_string(count) + " samples");
  return t;
}
inline std::vector<double> draw_alpha(std::size_t n, Rng& rng) {
  std::vector<double> a(n);
  for (double& v : a) v = uniform(rng, 0.0, 1.0);
  return a;
}
}  // namespace detail

/// k iterations of the classification step; each draws fresh positives, negatives and interpolation weights.
inline std::vector<LossReport> classification_step(ModelParams& params, const ArchitectureSpec& spec,
                                                   const BatchSampler& positives, const BatchSampler& negatives,
                                                   const ClassifierSettings& s, AdamState& adam, Rng& rng) {
  if (s.lambda != 0.0 && s.batch_pos != s.batch_neg)
    throw ConfigError("classification: gradient penalty pairs need batch_pos == batch_neg");
  std::vector<LossReport> reports;
  for (std::size_t it = 0; it < s.steps; ++it) {
    Tensor x_pos = detail::draw(positives, s.batch_pos, rng, "positive");
    Tensor x_neg = detail::draw(negatives, s.batch_neg, rng, "pseudo-negative");
    const auto alpha = detail::draw_alpha(s.batch_pos, rng);
    const std::uint64_t dropout_seed = rng();
    auto lg = binary_loss(params, spec, x_pos, x_neg, alpha, s.loss, s.lambda, Mode::Train, dropout_seed);
    adam_step(adam, params, lg.grads);
    reports.push_back(lg.report);
  }
  return reports;
}

}  // namespace winn
