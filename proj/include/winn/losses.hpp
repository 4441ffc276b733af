#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "winn/net_zoo.hpp"

namespace winn {

/// Floor on sigmoid probabilities inside the logs of the cross-entropy loss.
constexpr double kLogClampEpsilon = 1e-12;

namespace detail {
inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}
inline void require_nonempty(std::size_t a, std::size_t b, const char* what) {
  if (a == 0 || b == 0) throw UsageError(std::string(what) + ": score batches must be non-empty");
}
}  // namespace detail

/// -(mean f_pos - mean f_neg)
inline double wasserstein_loss(std::span<const double> f_pos, std::span<const double> f_neg) {
  detail::require_nonempty(f_pos.size(), f_neg.size(), "wasserstein_loss");
  return -(detail::mean_of(f_pos) - detail::mean_of(f_neg));
}

inline Var wasserstein_loss(Var f_pos, Var f_neg) {
  detail::require_nonempty(f_pos.value().numel(), f_neg.value().numel(), "wasserstein_loss");
  return sub(mean(f_neg), mean(f_pos));
}

struct CrossEntropyValue {
  double value = 0.0;
  std::size_t clamped = 0;  // terms that hit the log floor
};

/// -[mean ln sigma(f_pos) + mean ln sigma(-f_neg)], each log floored at ln(1e-12).
inline CrossEntropyValue cross_entropy_loss(std::span<const double> f_pos, std::span<const double> f_neg) {
  detail::require_nonempty(f_pos.size(), f_neg.size(), "cross_entropy_loss");
  const double ceiling = -std::log(kLogClampEpsilon);
  CrossEntropyValue out;
  auto term = [&](double z) {
    const double t = kernels::softplus(z);  // -ln sigma(-z)
    if (t >= ceiling) {
      ++out.clamped;
      return ceiling;
    }
    return t;
  };
  double sp = 0.0, sn = 0.0;
  for (double f : f_pos) sp += term(-f);
  for (double f : f_neg) sn += term(f);
  out.value = sp / static_cast<double>(f_pos.size()) + sn / static_cast<double>(f_neg.size());
  return out;
}

inline Var cross_entropy_loss(Var f_pos, Var f_neg) {
  detail::require_nonempty(f_pos.value().numel(), f_neg.value().numel(), "cross_entropy_loss");
  const double ceiling = -std::log(kLogClampEpsilon);
  Var pos = clamp_max(softplus(scale(f_pos, -1.0)), ceiling);
  Var neg = clamp_max(softplus(f_neg), ceiling);
  return add(mean(pos), mean(neg));
}

/// Mean K-class softmax cross-entropy of logits [N,K] against labels in [0,K).
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n) throw UsageError("softmax_cross_entropy: label count does not match batch");
  if (n == 0) throw UsageError("softmax_cross_entropy: empty batch");
  Tensor onehot({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw UsageError("label " + std::to_string(labels[i]) + " outside [0," + std::to_string(k) + ")");
    onehot[i * k + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  Var picked = reduce(mul(logits, logits.tape().constant(std::move(onehot))), 1, n, k);
  return mean(sub(logsumexp_rows(logits), picked));
}

/// Interpolates alpha_i * x_pos_i + (1 - alpha_i) * x_neg_i.
inline Tensor interpolate(const Tensor& x_pos, const Tensor& x_neg, std::span<const double> alpha) {
  if (x_pos.shape() != x_neg.shape()) throw UsageError("interpolate: positive and negative batches differ in shape");
  const std::size_t n = x_pos.shape().at(0);
  if (alpha.size() != n) throw UsageError("interpolate: need one alpha per pair");
  Tensor out(x_pos.shape());
  const std::size_t rs = x_pos.row_size();
  for (std::size_t i = 0; i < n; ++i) {
    const double a = alpha[i];
    if (!(a >= 0.0 && a <= 1.0)) throw UsageError("interpolate: alpha " + std::to_string(a) + " outside [0,1]");
    for (std::size_t j = 0; j < rs; ++j) out[i * rs + j] = a * x_pos[i * rs + j] + (1.0 - a) * x_neg[i * rs + j];
  }
  return out;
}

/// mean_i (||d f(x_i) / d x_i||_2 - 1)^2 on the tape, differentiable w.r.t. everything f depends on.
/// `score` maps a batch Var to per-sample scores [N].
template <class ScoreFn>
Var gradient_penalty_term(Var x_hat, ScoreFn&& score) {
  Tape& tape = x_hat.tape();
  Var f = score(x_hat);
  auto g = tape.grad(sum(f), std::span<const Var>(&x_hat, 1), true);
  Var norms = pow(sum_per_sample(square(g[0])), 0.5);
  return mean(square(affine(norms, 1.0, -1.0)));
}

struct PenaltyResult {
  double value = 0.0;  // lambda * mean (||grad|| - 1)^2
  ParamGrads grads;
};

/// lambda * mean (||grad_x f(x_hat)|| - 1)^2 and its parameter gradient via double backprop.
inline PenaltyResult gradient_penalty(const ModelParams& params, const ArchitectureSpec& spec, const Tensor& x_pos,
                                      const Tensor& x_neg, std::span<const double> alpha, double lambda,
                                      Mode mode = Mode::Eval, std::uint64_t dropout_seed = 0) {
  Tape tape;
  auto vars = params.bind(tape);
  Var x_hat = tape.leaf(interpolate(x_pos, x_neg, alpha), "interpolates");
  Var pen = scale(gradient_penalty_term(x_hat, [&](Var x) { return forward(spec, vars, x, mode, dropout_seed).f; }),
                  lambda);
  PenaltyResult out;
  out.value = pen.value().item();
  out.grads = values_of(tape.grad(pen, vars));
  return out;
}

struct LossReport {
  double wasserstein = 0.0;    // -(E+ f - E- f)
  double penalty = 0.0;        // mean (||grad|| - 1)^2, before lambda
  double lambda = 0.0;
  double cross_entropy = 0.0;  // binary CE (cross-entropy mode) or softmax CE (supervised)
  double alpha = 1.0;          // weight of the Wasserstein block in supervised mode
  double total = 0.0;
  double mean_f_pos = 0.0;
  double mean_f_neg = 0.0;
  std::size_t clamped = 0;
};

}  // namespace winn
