#pragma once

// Whole-network gradient checks against finite differences, shared by the
// unit tests and the acceptance runner.

#include <vector>

#include "fd_oracle.hpp"
#include "winn/losses.hpp"

namespace winn::testing {

inline std::vector<Tensor> random_direction(const ModelParams& params, Rng& rng) {
  std::vector<Tensor> d;
  for (const auto& e : params.entries()) d.push_back(gaussian_tensor(e.value.shape(), 1.0, rng));
  return d;
}

inline ModelParams shifted(const ModelParams& params, const std::vector<Tensor>& dir, double h) {
  ModelParams p = params;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].value.numel(); ++j) p[i].value[j] += h * dir[i][j];
  return p;
}

inline double dot(const ParamGrads& g, const std::vector<Tensor>& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += dot(g[i], d[i]);
  return s;
}

/// Central difference of fn(params) along `dir`.
template <class Fn>
double directional_param_difference(Fn&& fn, const ModelParams& params, const std::vector<Tensor>& dir,
                                    double h = 1e-5) {
  return (fn(shifted(params, dir, h)) - fn(shifted(params, dir, -h))) / (2.0 * h);
}

/// Adds N(0, std^2) noise to every parameter so biases and gains leave their initial values.
inline ModelParams roughened(ModelParams params, double stddev, Rng& rng) {
  for (auto& e : params.entries())
    for (double& v : e.value.values()) v += stddev * std::normal_distribution<double>(0.0, 1.0)(rng);
  return params;
}

struct NetworkCheck {
  double param_rel = 0.0;  // directional derivative along a random parameter direction
  double input_rel = 0.0;  // full input gradient, coordinate by coordinate
};

/// s = sum_i r_i f(x_i) for random r and x in [-1,1].
inline NetworkCheck check_network_gradients(const ArchitectureSpec& spec, const ModelParams& params, Rng& rng,
                                            std::size_t batch = 2, bool full_input = true) {
  Shape xs{batch};
  xs.insert(xs.end(), spec.input_shape.begin(), spec.input_shape.end());
  const Tensor x = uniform_tensor(xs, -1.0, 1.0, rng);
  const Tensor r = uniform_tensor({batch}, -1.0, 1.0, rng);
  auto value = [&](const ModelParams& p, const Tensor& in) { return dot(eval_f(p, spec, in, Mode::Eval), r); };

  Tape tape;
  auto vars = params.bind(tape);
  Var xv = tape.leaf(x, "input");
  Var s = sum(mul(forward(spec, vars, xv, Mode::Eval).f, tape.constant(r)));
  std::vector<Var> wrt = vars;
  wrt.push_back(xv);
  auto g = values_of(tape.grad(s, wrt));
  const Tensor gx = g.back();
  g.pop_back();

  NetworkCheck out;
  const auto dir = random_direction(params, rng);
  const double fd = directional_param_difference([&](const ModelParams& p) { return value(p, x); }, params, dir);
  out.param_rel = relative_error(dot(g, dir), fd);
  if (full_input) {
    Tensor fdx = central_difference([&](const std::vector<Tensor>& in) { return value(params, in[0]); }, {x}, 0);
    out.input_rel = relative_error(gx, fdx);
  } else {
    const Tensor dx = gaussian_tensor(x.shape(), 1.0, rng);
    const double fdd =
        directional_difference([&](const std::vector<Tensor>& in) { return value(params, in[0]); }, {x}, 0, dx);
    out.input_rel = relative_error(dot(gx, dx), fdd);
  }
  return out;
}

/// Parameter gradient of lambda * mean (||grad_x f(x_hat)|| - 1)^2 versus a directional finite difference.
inline double check_penalty_gradient(const ArchitectureSpec& spec, const ModelParams& params, Rng& rng,
                                     std::size_t batch = 3, double lambda = 10.0) {
  Shape xs{batch};
  xs.insert(xs.end(), spec.input_shape.begin(), spec.input_shape.end());
  const Tensor xp = uniform_tensor(xs, -1.0, 1.0, rng);
  const Tensor xn = uniform_tensor(xs, -1.0, 1.0, rng);
  std::vector<double> alpha(batch);
  for (double& a : alpha) a = uniform(rng, 0.0, 1.0);
  auto pr = gradient_penalty(params, spec, xp, xn, alpha, lambda);
  const auto dir = random_direction(params, rng);
  const double fd = directional_param_difference(
      [&](const ModelParams& p) { return gradient_penalty(p, spec, xp, xn, alpha, lambda).value; }, params, dir);
  return relative_error(dot(pr.grads, dir), fd);
}

}  // namespace winn::testing
