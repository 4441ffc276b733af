#pragma once

// Architecture presets, parameter initialization and the network forward pass.

#include <charconv>
#include <optional>
#include <string>
#include <vector>

#include "winn/model_params.hpp"
#include "winn/random.hpp"
#include "winn/tape.hpp"

namespace winn {

enum class LayerKind { Conv, AvgPool, Upsample, Dense };
enum class Mode { Train, Eval };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t kernel = 0;  // conv filter size
  std::size_t out = 0;     // conv channels or dense units
  bool norm = false;       // layer normalization after the affine map
  bool swish = false;
  double dropout = 0.0;    // drop probability, train mode only
};

struct ArchitectureSpec {
  std::string name;
  Shape input_shape;  // per sample: {C,H,W} or {D}
  std::vector<LayerSpec> layers;
  std::size_t classes = 0;  // K > 0 adds a K-way logit head next to the scalar head
  bool fan_in_init = false;  // weights ~ N(0, 1/fan_in) instead of N(0, 0.02^2)
};

constexpr double kLayerNormEpsilon = 1e-5;
constexpr double kInitWeightStd = 0.02;

// ---------------------------------------------------------------------------
// Shape chain

/// Output shape (per sample) after each trunk layer; validates the whole chain.
inline std::vector<Shape> shape_chain(const ArchitectureSpec& spec) {
  std::vector<Shape> chain;
  Shape cur = spec.input_shape;
  if (cur.empty()) throw ConfigError(spec.name + ": empty input shape");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = spec.name + " layer " + std::to_string(i);
    switch (l.kind) {
      case LayerKind::Conv:
        if (cur.size() != 3) throw ConfigError(where + ": convolution needs a {C,H,W} input, got " + to_string(cur));
        if (l.kernel % 2 == 0 || l.out == 0) throw ConfigError(where + ": bad convolution descriptor");
        cur = {l.out, cur[1], cur[2]};
        break;
      case LayerKind::AvgPool:
        if (cur.size() != 3) throw ConfigError(where + ": pooling needs a {C,H,W} input");
        if (cur[1] % 2 || cur[2] % 2)
          throw ConfigError(where + ": pooling " + to_string(cur) + " gives a non-integer spatial size");
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::Upsample:
        if (cur.size() != 3) throw ConfigError(where + ": upsampling needs a {C,H,W} input");
        cur = {cur[0], cur[1] * 2, cur[2] * 2};
        break;
      case LayerKind::Dense:
        if (l.out == 0) throw ConfigError(where + ": dense layer with zero units");
        cur = {l.out};
        break;
    }
    chain.push_back(cur);
  }
  return chain;
}

inline std::size_t feature_size(const ArchitectureSpec& spec) {
  auto chain = shape_chain(spec);
  return numel_of(chain.empty() ? spec.input_shape : chain.back());
}

// ---------------------------------------------------------------------------
// Presets

namespace detail {

inline LayerSpec conv(std::size_t k, std::size_t out, bool norm) { return {LayerKind::Conv, k, out, norm, true, 0.0}; }
inline LayerSpec pool() { return {LayerKind::AvgPool, 0, 0, false, false, 0.0}; }

struct PresetName {
  std::string base;
  std::vector<long> args;
};

inline PresetName parse_preset_name(const std::string& name) {
  PresetName out;
  const auto open = name.find('(');
  if (open == std::string::npos) {
    out.base = name;
    return out;
  }
  if (name.back() != ')') throw ConfigError("malformed preset name '" + name + "'");
  out.base = name.substr(0, open);
  std::string inner = name.substr(open + 1, name.size() - open - 2);
  std::size_t pos = 0;
  while (pos <= inner.size()) {
    auto comma = inner.find(',', pos);
    if (comma == std::string::npos) comma = inner.size();
    std::string tok = inner.substr(pos, comma - pos);
    tok.erase(0, tok.find_first_not_of(' '));
    tok.erase(tok.find_last_not_of(' ') + 1);
    long v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
      throw ConfigError("preset '" + name + "': argument '" + tok + "' is not an integer");
    out.args.push_back(v);
    pos = comma + 1;
  }
  return out;
}

}  // namespace detail

/// Convolutional classifier for 64x64x3 images (texture / face modeling).
/// Swish after every convolution, layer norm after every convolution but the first.
inline ArchitectureSpec appendix_c_spec(std::size_t resolution = 64, std::size_t width_divisor = 1,
                                        std::size_t channels = 3) {
  if (resolution == 0 || resolution % 16 != 0)
    throw ConfigError("appendixC: input resolution " + std::to_string(resolution) +
                      " must be a positive multiple of 16 (four 2x2 poolings give a non-integer spatial size)");
  if (width_divisor == 0 || 32 % width_divisor != 0)
    throw ConfigError("appendixC: width divisor " + std::to_string(width_divisor) + " must divide 32");
  if (channels == 0) throw ConfigError("appendixC: zero input channels");
  const std::size_t d = width_divisor;
  ArchitectureSpec s;
  s.name = resolution == 64 && d == 1 && channels == 3
               ? "appendixC64"
               : "appendixC_scaled(" + std::to_string(resolution) + "," + std::to_string(d) + "," +
                     std::to_string(channels) + ")";
  s.input_shape = {channels, resolution, resolution};
  s.layers = {detail::conv(3, 32 / d, false), detail::conv(3, 64 / d, true), detail::pool(),
              detail::conv(3, 64 / d, true),  detail::conv(3, 128 / d, true), detail::pool(),
              detail::conv(3, 128 / d, true), detail::conv(3, 256 / d, true), detail::pool(),
              detail::conv(3, 256 / d, true), detail::conv(3, 512 / d, true), detail::pool()};
  return s;
}

/// Two swish hidden layers for 2-D point data.
inline ArchitectureSpec mlp2d_spec(std::size_t hidden) {
  if (hidden == 0) throw ConfigError("mlp2d: hidden width must be >= 1");
  ArchitectureSpec s;
  s.name = "mlp2d(" + std::to_string(hidden) + ")";
  s.input_shape = {2};
  s.layers = {{LayerKind::Dense, 0, hidden, false, true, 0.0}, {LayerKind::Dense, 0, hidden, false, true, 0.0}};
  s.fan_in_init = true;
  return s;
}

/// Small digit CNN with a K-way logit head and the scalar score head on one trunk.
inline ArchitectureSpec supervised_spec(std::size_t classes, std::size_t resolution = 14, std::size_t width = 16) {
  if (classes < 2) throw ConfigError("supervised_head: need K >= 2 classes");
  if (resolution == 0 || resolution % 2) throw ConfigError("supervised_head: resolution must be even");
  if (width == 0) throw ConfigError("supervised_head: zero width");
  ArchitectureSpec s;
  s.name = "supervised_head(" + std::to_string(classes) + "," + std::to_string(resolution) + "," +
           std::to_string(width) + ")";
  s.input_shape = {1, resolution, resolution};
  s.layers = {detail::conv(3, width, false), detail::conv(3, 2 * width, true), detail::pool(),
              {LayerKind::Dense, 0, 8 * width, false, true, 0.0}};
  s.classes = classes;
  return s;
}

/// Resolve a preset string: appendixC64 | appendixC_scaled(R,D[,C]) | mlp2d(h) | supervised_head(K[,R[,W]]).
inline ArchitectureSpec preset_spec(const std::string& name) {
  auto p = detail::parse_preset_name(name);
  auto arg = [&](std::size_t i, long fallback) -> std::size_t {
    long v = i < p.args.size() ? p.args[i] : fallback;
    if (v <= 0) throw ConfigError("preset '" + name + "': arguments must be positive");
    return static_cast<std::size_t>(v);
  };
  if (p.base == "appendixC64" && p.args.empty()) return appendix_c_spec();
  if (p.base == "appendixC_scaled" && (p.args.size() == 2 || p.args.size() == 3))
    return appendix_c_spec(arg(0, 64), arg(1, 1), arg(2, 3));
  if (p.base == "mlp2d" && p.args.size() == 1) return mlp2d_spec(arg(0, 1));
  if (p.base == "supervised_head" && !p.args.empty() && p.args.size() <= 3)
    return supervised_spec(arg(0, 10), arg(1, 14), arg(2, 16));
  throw ConfigError("unknown architecture preset '" + name + "'");
}

/// Apply dropout with probability `rate` after each of the last `count` parametric trunk layers.
inline ArchitectureSpec with_dropout(ArchitectureSpec spec, double rate, std::size_t count) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0,1)");
  for (auto it = spec.layers.rbegin(); it != spec.layers.rend() && count > 0; ++it) {
    if (it->kind == LayerKind::Conv || it->kind == LayerKind::Dense) {
      it->dropout = rate;
      --count;
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Parameters

/// Gaussian(0, 0.02^2) weights (or N(0, 1/fan_in) with fan_in_init), zero biases, unit gains.
inline ModelParams init_params(const ArchitectureSpec& spec, std::uint64_t seed) {
  const auto chain = shape_chain(spec);
  auto wstd = [&](std::size_t fan_in) {
    return spec.fan_in_init ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : kInitWeightStd;
  };
  Rng rng(seed);
  ModelParams p;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string tag = std::to_string(i);
    if (l.kind == LayerKind::Conv) {
      p.add("conv" + tag + ".weight", gaussian_tensor({l.out, cur[0], l.kernel, l.kernel}, wstd(cur[0] * l.kernel * l.kernel), rng),
            ParamRole::Internal);
      p.add("conv" + tag + ".bias", Tensor({l.out}), ParamRole::Internal);
    } else if (l.kind == LayerKind::Dense) {
      p.add("dense" + tag + ".weight", gaussian_tensor({numel_of(cur), l.out}, wstd(numel_of(cur)), rng),
            ParamRole::Internal);
      p.add("dense" + tag + ".bias", Tensor({l.out}), ParamRole::Internal);
    }
    if (l.norm) {
      const std::size_t channels = chain[i][0];
      p.add("norm" + tag + ".gain", Tensor({channels}, 1.0), ParamRole::Norm);
      p.add("norm" + tag + ".bias", Tensor({channels}), ParamRole::Norm);
    }
    cur = chain[i];
  }
  const std::size_t features = numel_of(cur);
  p.add("head.f.weight", gaussian_tensor({features, 1}, wstd(features), rng), ParamRole::TopLayer);
  p.add("head.f.bias", Tensor({1}), ParamRole::TopLayer);
  if (spec.classes > 0) {
    p.add("head.class.weight", gaussian_tensor({features, spec.classes}, wstd(features), rng), ParamRole::TopLayer);
    p.add("head.class.bias", Tensor({spec.classes}), ParamRole::TopLayer);
  }
  return p;
}

struct Preset {
  ArchitectureSpec spec;
  ModelParams params;
};

inline Preset build_preset(const std::string& name, std::uint64_t seed) {
  Preset p{preset_spec(name), {}};
  p.params = init_params(p.spec, seed);
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Layer normalization over all features of each sample, per-channel gain and bias.
inline Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEpsilon) {
  const Shape shape = x.shape();
  const std::size_t n = shape[0];
  const std::size_t per_sample = n == 0 ? 0 : x.value().numel() / n;
  const std::size_t channels = shape.size() > 1 ? shape[1] : 1;
  const std::size_t inner = per_sample / channels;
  const double inv_f = 1.0 / static_cast<double>(per_sample);
  Var mu = scale(sum_per_sample(x), inv_f);
  Var centered = sub(x, expand_per_sample(mu, shape));
  Var var = scale(sum_per_sample(square(centered)), inv_f);
  Var inv_std = pow(affine(var, 1.0, eps), -0.5);
  Var y = mul(centered, expand_per_sample(inv_std, shape));
  y = mul(y, broadcast(gain, shape, n, channels, inner));
  return add(y, broadcast(bias, shape, n, channels, inner));
}

inline Var dense(Var x, Var weight, Var bias) {
  if (x.shape().size() != 2) x = flatten(x);
  Var y = matmul(x, weight);
  const std::size_t n = y.shape()[0], m = y.shape()[1];
  return add(y, broadcast(bias, {n, m}, n, m, 1));
}

inline Var conv_layer(Var x, Var weight, Var bias) {
  Var y = conv2d(x, weight);
  const Shape s = y.shape();
  return add(y, broadcast(bias, s, s[0], s[1], s[2] * s[3]));
}

/// Inverted dropout with a recorded mask.
inline Var dropout(Var x, double rate, Rng& rng) {
  Tensor mask(x.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  for (double& m : mask.values()) m = keep(rng) ? s : 0.0;
  return mul(x, x.tape().constant(std::move(mask), "dropout.mask"));
}

struct ForwardOutput {
  Var features;
  Var f;                     // [N] scalar score, no sigmoid
  std::optional<Var> logits;  // [N,K] when the spec has a class head
};

/// Runs the network on a batch [N, input_shape...]; `params` follows init_params order.
inline ForwardOutput forward(const ArchitectureSpec& spec, std::span<const Var> params, Var x, Mode mode,
                             std::uint64_t dropout_seed = 0) {
  Tape& tape = x.tape();
  Shape expected{x.shape().empty() ? 0 : x.shape()[0]};
  expected.insert(expected.end(), spec.input_shape.begin(), spec.input_shape.end());
  if (x.shape() != expected)
    tape.shape_error(OpKind::Leaf, spec.name + " expects batch " + to_string(expected) + ", got " + to_string(x.shape()));
  const std::string saved_scope = tape.scope();
  std::size_t next = 0;
  auto take = [&]() -> Var {
    if (next >= params.size()) throw ConfigError(spec.name + ": parameter list too short");
    return params[next++];
  };
  Rng drop_rng(splitmix64(dropout_seed));
  Var h = x;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    tape.set_scope(spec.name + "/layer" + std::to_string(i));
    switch (l.kind) {
      case LayerKind::Conv: {
        Var w = take();
        Var b = take();
        h = conv_layer(h, w, b);
        break;
      }
      case LayerKind::Dense: {
        Var w = take();
        Var b = take();
        h = dense(h, w, b);
        break;
      }
      case LayerKind::AvgPool: h = avg_pool2(h); break;
      case LayerKind::Upsample: h = upsample2(h); break;
    }
    if (l.norm) {
      Var g = take();
      Var b = take();
      h = layer_norm(h, g, b);
    }
    if (l.swish) h = swish(h);
    if (l.dropout > 0.0 && mode == Mode::Train) h = dropout(h, l.dropout, drop_rng);
  }
  tape.set_scope(spec.name + "/head");
  ForwardOutput out;
  out.features = flatten(h);
  Var fw = take();
  Var fb = take();
  Var fo = dense(out.features, fw, fb);
  out.f = reshape(fo, {fo.shape()[0]});
  if (spec.classes > 0) {
    Var cw = take();
    Var cb = take();
    out.logits = dense(out.features, cw, cb);
  }
  if (next != params.size()) throw ConfigError(spec.name + ": parameter list has unused entries");
  tape.set_scope(saved_scope);
  return out;
}

/// Per-sample scores f(x) for a batch.
inline Tensor eval_f(const ModelParams& params, const ArchitectureSpec& spec, const Tensor& batch, Mode mode,
                     std::uint64_t dropout_seed = 0) {
  Tape tape;
  auto vars = params.bind(tape, false);
  Var x = tape.constant(batch, "input");
  return forward(spec, vars, x, mode, dropout_seed).f.value();
}

/// Class logits [N,K] for a batch.
inline Tensor eval_logits(const ModelParams& params, const ArchitectureSpec& spec, const Tensor& batch) {
  if (spec.classes == 0) throw UsageError(spec.name + " has no class head");
  Tape tape;
  auto vars = params.bind(tape, false);
  Var x = tape.constant(batch, "input");
  return forward(spec, vars, x, Mode::Eval).logits->value();
}

struct ScoreAndGrad {
  Tensor scores;      // [N]
  Tensor input_grad;  // same shape as the batch
};

/// f(x) and d f(x_i) / d x_i for every sample of the batch.
inline ScoreAndGrad score_and_input_grad(const ModelParams& params, const ArchitectureSpec& spec, const Tensor& batch,
                                         Mode mode, std::uint64_t dropout_seed = 0) {
  Tape tape;
  auto vars = params.bind(tape, false);
  Var x = tape.leaf(batch, "input");
  Var f = forward(spec, vars, x, mode, dropout_seed).f;
  // Samples are independent, so the gradient of the batch sum holds per-sample gradients.
  auto g = tape.grad(sum(f), std::span<const Var>(&x, 1), false);
  return {f.value(), g[0].value()};
}

// ---------------------------------------------------------------------------
// Fixed-weight initializer network: 4x4x512 uniform codes -> 64x64x3 images.

class AltInitializer {
 public:
  static constexpr double kWeightStd = 0.1;

  explicit AltInitializer(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t chans[] = {512, 256, 128, 64, 3};
    for (std::size_t i = 0; i < 4; ++i)
      weights_.push_back(gaussian_tensor({chans[i + 1], chans[i], 5, 5}, kWeightStd, rng));
  }

  const std::vector<Tensor>& weights() const noexcept { return weights_; }
  static Shape code_shape() { return {512, 4, 4}; }
  static Shape output_shape() { return {3, 64, 64}; }

  /// Conv5 -> LN -> up, three times, then Conv5 (no LN) -> up. No nonlinearities.
  Tensor apply(const Tensor& codes) const {
    Tensor h = codes;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = kernels::conv2d(h, weights_[i]);
      if (i + 1 < weights_.size()) normalize(h);
      h = kernels::upsample2(h);
    }
    return h;
  }

  Tensor generate(std::size_t count, Rng& rng) const {
    Shape s{count};
    for (std::size_t d : code_shape()) s.push_back(d);
    return apply(uniform_tensor(std::move(s), -1.0, 1.0, rng));
  }

  /// Output shapes after each stage (for shape checks).
  static std::vector<Shape> shape_chain() {
    return {{256, 4, 4}, {256, 8, 8}, {128, 8, 8}, {128, 16, 16}, {64, 16, 16}, {64, 32, 32}, {3, 32, 32}, {3, 64, 64}};
  }

 private:
  static void normalize(Tensor& h) {
    const std::size_t n = h.dim(0);
    const std::size_t f = h.numel() / n;
    for (std::size_t i = 0; i < n; ++i) {
      auto r = h.row(i);
      double mu = 0.0;
      for (double v : r) mu += v;
      mu /= static_cast<double>(f);
      double var = 0.0;
      for (double v : r) var += (v - mu) * (v - mu);
      var /= static_cast<double>(f);
      const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
      for (double& v : r) v = (v - mu) * inv;
    }
  }

  std::vector<Tensor> weights_;
};

}  // namespace winn
