#pragma once

// Randomized gradient checks for every tape primitive (and the composites
// built from them), shared by the unit tests and the acceptance runner.

#include <functional>
#include <string>
#include <vector>

#include "fd_oracle.hpp"
#include "winn/net_zoo.hpp"
#include "winn/random.hpp"
#include "winn/tape.hpp"

namespace winn::testing {

struct PrimitiveCase {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  std::function<Var(std::vector<Var>&)> build;
};

inline Tensor rand_uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return uniform_tensor(std::move(s), lo, hi, rng);
}

/// Uniform in [-1,1] but kept at least `gap` away from `kink`.
inline Tensor rand_avoiding(Shape s, Rng& rng, double kink, double gap) {
  Tensor t = rand_uniform(std::move(s), rng);
  for (double& v : t.values())
    if (std::abs(v - kink) < gap) v = kink + (v < kink ? -gap : gap);
  return t;
}

inline std::vector<PrimitiveCase> primitive_catalog() {
  using V = std::vector<Var>;
  std::vector<PrimitiveCase> c;
  auto one = [](Shape s) { return [s](Rng& r) { return std::vector<Tensor>{rand_uniform(s, r)}; }; };
  auto two = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return std::vector<Tensor>{rand_uniform(a, r), rand_uniform(b, r)}; };
  };
  c.push_back({"add", two({3, 4}, {3, 4}), [](V& v) { return add(v[0], v[1]); }});
  c.push_back({"sub", two({3, 4}, {3, 4}), [](V& v) { return sub(v[0], v[1]); }});
  c.push_back({"mul", two({3, 4}, {3, 4}), [](V& v) { return mul(v[0], v[1]); }});
  c.push_back({"affine", one({5}), [](V& v) { return affine(v[0], -1.7, 0.3); }});
  c.push_back({"square", one({6}), [](V& v) { return square(v[0]); }});
  c.push_back({"pow", [](Rng& r) { return std::vector<Tensor>{rand_uniform({6}, r, 0.5, 1.5)}; },
               [](V& v) { return pow(v[0], -0.5); }});
  c.push_back({"sigmoid", one({7}), [](V& v) { return sigmoid(v[0]); }});
  c.push_back({"softplus", one({7}), [](V& v) { return softplus(v[0]); }});
  c.push_back({"clamp_max", [](Rng& r) { return std::vector<Tensor>{rand_avoiding({8}, r, 0.2, 1e-3)}; },
               [](V& v) { return clamp_max(v[0], 0.2); }});
  c.push_back({"swish", one({7}), [](V& v) { return swish(v[0]); }});
  c.push_back({"matmul", two({3, 4}, {4, 2}), [](V& v) { return matmul(v[0], v[1]); }});
  c.push_back({"matmul_ta", two({4, 3}, {4, 2}), [](V& v) { return matmul(v[0], v[1], true, false); }});
  c.push_back({"matmul_tb", two({3, 4}, {2, 4}), [](V& v) { return matmul(v[0], v[1], false, true); }});
  c.push_back({"matmul_tatb", two({4, 3}, {2, 4}), [](V& v) { return matmul(v[0], v[1], true, true); }});
  c.push_back({"broadcast", one({3}), [](V& v) { return broadcast(v[0], {2, 3, 4}, 2, 3, 4); }});
  c.push_back({"reduce", one({2, 3, 4}), [](V& v) { return reduce(v[0], 2, 3, 4); }});
  c.push_back({"reshape", one({2, 6}), [](V& v) { return reshape(v[0], {3, 4}); }});
  c.push_back({"sum", one({2, 5}), [](V& v) { return sum(v[0]); }});
  c.push_back({"mean", one({2, 5}), [](V& v) { return mean(v[0]); }});
  c.push_back({"l2_norm", one({6}), [](V& v) { return l2_norm(v[0]); }});
  c.push_back({"conv2d_3x3", two({2, 2, 5, 4}, {3, 2, 3, 3}), [](V& v) { return conv2d(v[0], v[1]); }});
  c.push_back({"conv2d_5x5", two({1, 2, 6, 6}, {2, 2, 5, 5}), [](V& v) { return conv2d(v[0], v[1]); }});
  c.push_back({"conv2d_3x3_wide", two({2, 3, 4, 5}, {6, 3, 3, 3}), [](V& v) { return conv2d(v[0], v[1]); }});
  c.push_back({"conv_weight_grad", two({2, 2, 4, 4}, {2, 3, 4, 4}),
               [](V& v) { return conv_weight_grad(v[0], v[1], 3); }});
  c.push_back({"conv_weight_grad_wide", two({2, 6, 4, 4}, {2, 5, 4, 4}),
               [](V& v) { return conv_weight_grad(v[0], v[1], 3); }});
  c.push_back({"flip_transpose", one({2, 3, 3, 3}), [](V& v) { return flip_transpose(v[0]); }});
  c.push_back({"avg_pool2", one({2, 2, 4, 6}), [](V& v) { return avg_pool2(v[0]); }});
  c.push_back({"upsample2", one({2, 2, 3, 2}), [](V& v) { return upsample2(v[0]); }});
  c.push_back({"logsumexp_rows", one({3, 4}), [](V& v) { return logsumexp_rows(v[0]); }});
  c.push_back({"softmax_rows", one({3, 4}), [](V& v) { return softmax_rows(v[0]); }});
  c.push_back({"layer_norm",
               [](Rng& r) {
                 return std::vector<Tensor>{rand_uniform({2, 3, 2, 2}, r), rand_uniform({3}, r), rand_uniform({3}, r)};
               },
               [](V& v) { return layer_norm(v[0], v[1], v[2]); }});
  c.push_back({"dense",
               [](Rng& r) {
                 return std::vector<Tensor>{rand_uniform({3, 4}, r), rand_uniform({4, 2}, r), rand_uniform({2}, r)};
               },
               [](V& v) { return dense(v[0], v[1], v[2]); }});
  c.push_back({"dropout", one({4, 5}), [](V& v) {
                 Rng r(1234);
                 return dropout(v[0], 0.5, r);
               }});
  return c;
}

struct CheckResult {
  double first_order = 0.0;   // max relative error over inputs
  double second_order = 0.0;  // max relative error of the double-backprop gradient
};

/// s(inputs) = sum(out * R) for a fixed random R; compares d s against central
/// differences, then d ||grad s||^2 against central differences of the first-order gradients.
inline CheckResult check_primitive(const PrimitiveCase& pc, Rng& rng, bool second_order = true) {
  std::vector<Tensor> inputs = pc.inputs(rng);
  Tensor weights;
  {
    Tape t;
    std::vector<Var> v;
    for (auto& x : inputs) v.push_back(t.leaf(x));
    weights = rand_uniform(pc.build(v).shape(), rng);
  }
  auto scalar = [&](const std::vector<Tensor>& in) {
    Tape t;
    std::vector<Var> v;
    for (auto& x : in) v.push_back(t.leaf(x));
    const Tensor& out = pc.build(v).value();
    return dot(out, weights);
  };
  // First-order gradients as a plain function of the inputs.
  auto first_grads = [&](const std::vector<Tensor>& in, bool create_graph, Tape& t, std::vector<Var>& v) {
    for (auto& x : in) v.push_back(t.leaf(x));
    Var s = sum(mul(pc.build(v), t.constant(weights)));
    return t.grad(s, v, create_graph);
  };
  CheckResult res;
  Tape tape;
  std::vector<Var> leaves;
  auto g = first_grads(inputs, true, tape, leaves);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor fd = central_difference(scalar, inputs, i);
    res.first_order = std::max(res.first_order, relative_error(g[i].value(), fd));
  }
  if (!second_order) return res;
  // h = sum_i ||grad_i s||^2
  Var h = tape.constant(Tensor::scalar(0.0));
  for (auto& gi : g) h = add(h, sum(square(gi)));
  auto hg = tape.grad(h, leaves);
  auto h_value = [&](const std::vector<Tensor>& in) {
    Tape t;
    std::vector<Var> v;
    auto gg = first_grads(in, false, t, v);
    double acc = 0.0;
    for (auto& x : gg) acc += dot(x.value(), x.value());
    return acc;
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor fd = central_difference(h_value, inputs, i);
    res.second_order = std::max(res.second_order, relative_error(hg[i].value(), fd, 1e-3));
  }
  return res;
}

}  // namespace winn::testing
