#pragma once

// Reverse-mode automatic differentiation on a recorded tape.
//
// Every node stores its forward value. grad() walks the tape backwards and
// expresses each vector-Jacobian product with the same primitive vocabulary,
// appending those nodes to the same tape. Differentiating the result again
// (e.g. a penalty on an input-gradient) is therefore another grad() call.

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "winn/kernels.hpp"
#include "winn/tensor.hpp"

namespace winn {

enum class OpKind : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Affine,  // scale * x + shift
  Pow,
  Sigmoid,
  Softplus,
  ClampMax,
  MatMul,
  Broadcast,
  Reduce,
  Reshape,
  Conv2d,
  ConvWeightGrad,
  FlipTranspose,
  AvgPool2,
  Upsample2,
  LogSumExpRows,
  SoftmaxRows,
};

inline std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Affine: return "affine";
    case OpKind::Pow: return "pow";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softplus: return "softplus";
    case OpKind::ClampMax: return "clamp_max";
    case OpKind::MatMul: return "matmul";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Reduce: return "reduce";
    case OpKind::Reshape: return "reshape";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::ConvWeightGrad: return "conv_weight_grad";
    case OpKind::FlipTranspose: return "flip_transpose";
    case OpKind::AvgPool2: return "avg_pool2";
    case OpKind::Upsample2: return "upsample2";
    case OpKind::LogSumExpRows: return "logsumexp_rows";
    case OpKind::SoftmaxRows: return "softmax_rows";
  }
  return "?";
}

/// Op-local constants. Which fields are meaningful depends on the op.
struct OpAttrs {
  double scale = 0.0;  // Affine scale, Pow exponent, ClampMax ceiling
  double shift = 0.0;  // Affine shift
  bool trans_a = false;
  bool trans_b = false;
  std::size_t outer = 0, mid = 0, inner = 0;  // Broadcast/Reduce view
  std::size_t kernel = 0;                     // ConvWeightGrad
  Shape shape;                                // Broadcast/Reshape target
};

struct Node {
  OpKind op = OpKind::Leaf;
  std::array<int, 2> parents{-1, -1};
  Tensor value;
  OpAttrs attrs;
  bool requires_grad = false;
  // Set on nodes produced by a first-order-only grad() call.
  bool first_order_only = false;
  std::string label;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  int id() const noexcept { return id_; }
  Tape& tape() const noexcept { return *tape_; }
  bool valid() const noexcept { return tape_ != nullptr && id_ >= 0; }
  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameter or sample batch).
  Var leaf(Tensor value, std::string name = {}, bool requires_grad = true) {
    check_finite(value, static_cast<int>(nodes_.size()), OpKind::Leaf);
    Node n;
    n.op = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.label = std::move(name);
    return push(std::move(n));
  }

  /// Non-differentiable tensor (masks, labels, fixed weights).
  Var constant(Tensor value, std::string name = {}) {
    check_finite(value, static_cast<int>(nodes_.size()), OpKind::Constant);
    Node n;
    n.op = OpKind::Constant;
    n.value = std::move(value);
    n.label = std::move(name);
    return push(std::move(n));
  }

  Var record(OpKind op, std::array<int, 2> parents, OpAttrs attrs) {
    const int id = static_cast<int>(nodes_.size());
    const Tensor* a = parents[0] >= 0 ? &nodes_[static_cast<std::size_t>(parents[0])].value : nullptr;
    const Tensor* b = parents[1] >= 0 ? &nodes_[static_cast<std::size_t>(parents[1])].value : nullptr;
    Node n;
    n.op = op;
    n.parents = parents;
    n.value = evaluate(op, attrs, a, b);
    check_finite(n.value, id, op);
    n.attrs = std::move(attrs);
    n.label = scope_;
    for (int p : parents)
      if (p >= 0) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(p)].requires_grad;
    n.first_order_only = recording_first_order_;
    return push(std::move(n));
  }

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Label attached to subsequently recorded nodes; used in error messages.
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const noexcept { return scope_; }

  /// Exact gradients of the scalar `output` w.r.t. each of `wrt`.
  /// With create_graph the returned gradients are themselves differentiable.
  inline std::vector<Var> grad(Var output, std::span<const Var> wrt, bool create_graph = true);

  /// Recompute every derived node from its parents; true when all match bit-exactly.
  bool replay_matches() const {
    for (const Node& n : nodes_) {
      if (n.op == OpKind::Leaf || n.op == OpKind::Constant) continue;
      const Tensor* a = n.parents[0] >= 0 ? &nodes_[static_cast<std::size_t>(n.parents[0])].value : nullptr;
      const Tensor* b = n.parents[1] >= 0 ? &nodes_[static_cast<std::size_t>(n.parents[1])].value : nullptr;
      if (!(evaluate(n.op, n.attrs, a, b) == n.value)) return false;
    }
    return true;
  }

  /// Every parent id precedes its child.
  bool is_topologically_ordered() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (int p : nodes_[i].parents)
        if (p >= static_cast<int>(i)) return false;
    return true;
  }

  static Tensor evaluate(OpKind op, const OpAttrs& at, const Tensor* a, const Tensor* b) {
    namespace k = kernels;
    switch (op) {
      case OpKind::Leaf:
      case OpKind::Constant: throw UsageError("evaluate() called on a leaf");
      case OpKind::Add: return k::zip(*a, *b, [](double x, double y) { return x + y; });
      case OpKind::Sub: return k::zip(*a, *b, [](double x, double y) { return x - y; });
      case OpKind::Mul: return k::zip(*a, *b, [](double x, double y) { return x * y; });
      case OpKind::Affine: {
        const double s = at.scale, t = at.shift;
        return k::map(*a, [s, t](double x) { return s * x + t; });
      }
      case OpKind::Pow: {
        const double p = at.scale;
        if (p == 2.0) return k::map(*a, [](double x) { return x * x; });
        return k::map(*a, [p](double x) { return std::pow(x, p); });
      }
      case OpKind::Sigmoid: return k::map(*a, k::sigmoid);
      case OpKind::Softplus: return k::map(*a, k::softplus);
      case OpKind::ClampMax: {
        const double c = at.scale;
        return k::map(*a, [c](double x) { return x < c ? x : c; });
      }
      case OpKind::MatMul: return k::matmul(*a, *b, at.trans_a, at.trans_b);
      case OpKind::Broadcast: return k::broadcast(*a, at.shape, at.outer, at.mid, at.inner);
      case OpKind::Reduce: return k::reduce(*a, at.outer, at.mid, at.inner);
      case OpKind::Reshape: return a->reshaped(at.shape);
      case OpKind::Conv2d: return k::conv2d(*a, *b);
      case OpKind::ConvWeightGrad: return k::conv_weight_grad(*a, *b, at.kernel);
      case OpKind::FlipTranspose: return k::flip_transpose(*a);
      case OpKind::AvgPool2: return k::avg_pool2(*a);
      case OpKind::Upsample2: return k::upsample2(*a);
      case OpKind::LogSumExpRows: return k::logsumexp_rows(*a);
      case OpKind::SoftmaxRows: return k::softmax_rows(*a);
    }
    throw UsageError("unknown op");
  }

  [[noreturn]] void shape_error(OpKind op, const std::string& what) const {
    std::string msg = "node " + std::to_string(nodes_.size()) + " (" + std::string(op_name(op));
    if (!scope_.empty()) msg += " in '" + scope_ + "'";
    throw ConfigError(msg + "): " + what);
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  void check_finite(const Tensor& t, int id, OpKind op) const {
    if (!t.all_finite()) {
      std::string msg = "non-finite value produced at node " + std::to_string(id) + " (" + std::string(op_name(op));
      if (!scope_.empty()) msg += " in '" + scope_ + "'";
      throw NumericError(msg + ")");
    }
  }

  inline Var vjp(int node_id, int which, Var g);

  std::deque<Node> nodes_;  // deque: references stay valid while appending
  std::string scope_;
  bool recording_first_order_ = false;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }

// ---------------------------------------------------------------------------
// Primitive constructors. Shape checks name the offending node.

namespace detail {
inline void same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw UsageError("operands live on different tapes");
}
inline void same_shape(OpKind op, const Var& a, const Var& b) {
  same_tape(a, b);
  if (a.shape() != b.shape())
    a.tape().shape_error(op, "operand shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
}
}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_shape(OpKind::Add, a, b);
  return a.tape().record(OpKind::Add, {a.id(), b.id()}, {});
}
inline Var sub(Var a, Var b) {
  detail::same_shape(OpKind::Sub, a, b);
  return a.tape().record(OpKind::Sub, {a.id(), b.id()}, {});
}
inline Var mul(Var a, Var b) {
  detail::same_shape(OpKind::Mul, a, b);
  return a.tape().record(OpKind::Mul, {a.id(), b.id()}, {});
}
inline Var affine(Var x, double scale, double shift) {
  OpAttrs at;
  at.scale = scale;
  at.shift = shift;
  return x.tape().record(OpKind::Affine, {x.id(), -1}, at);
}
inline Var scale(Var x, double c) { return affine(x, c, 0.0); }
inline Var pow(Var x, double p) {
  OpAttrs at;
  at.scale = p;
  return x.tape().record(OpKind::Pow, {x.id(), -1}, at);
}
inline Var square(Var x) { return pow(x, 2.0); }
inline Var sigmoid(Var x) { return x.tape().record(OpKind::Sigmoid, {x.id(), -1}, {}); }
inline Var softplus(Var x) { return x.tape().record(OpKind::Softplus, {x.id(), -1}, {}); }
inline Var clamp_max(Var x, double ceiling) {
  OpAttrs at;
  at.scale = ceiling;
  return x.tape().record(OpKind::ClampMax, {x.id(), -1}, at);
}

inline Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
  detail::same_tape(a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2)
    a.tape().shape_error(OpKind::MatMul, "operands must be rank 2, got " + to_string(a.shape()) + " and " +
                                              to_string(b.shape()));
  const std::size_t inner_a = trans_a ? a.shape()[0] : a.shape()[1];
  const std::size_t inner_b = trans_b ? b.shape()[1] : b.shape()[0];
  if (inner_a != inner_b)
    a.tape().shape_error(OpKind::MatMul, "inner dimensions " + std::to_string(inner_a) + " and " +
                                              std::to_string(inner_b) + " differ");
  OpAttrs at;
  at.trans_a = trans_a;
  at.trans_b = trans_b;
  return a.tape().record(OpKind::MatMul, {a.id(), b.id()}, at);
}

/// Repeat a [mid] vector (any shape with mid elements) into out_shape viewed as [outer, mid, inner].
inline Var broadcast(Var v, Shape out_shape, std::size_t outer, std::size_t mid, std::size_t inner) {
  if (v.value().numel() != mid || numel_of(out_shape) != outer * mid * inner)
    v.tape().shape_error(OpKind::Broadcast, "cannot broadcast " + to_string(v.shape()) + " into " +
                                                 to_string(out_shape));
  OpAttrs at;
  at.shape = std::move(out_shape);
  at.outer = outer;
  at.mid = mid;
  at.inner = inner;
  return v.tape().record(OpKind::Broadcast, {v.id(), -1}, at);
}

/// Sum x viewed as [outer, mid, inner] over outer and inner -> [mid].
inline Var reduce(Var x, std::size_t outer, std::size_t mid, std::size_t inner) {
  if (x.value().numel() != outer * mid * inner)
    x.tape().shape_error(OpKind::Reduce, "view [" + std::to_string(outer) + "," + std::to_string(mid) + "," +
                                              std::to_string(inner) + "] does not fit " + to_string(x.shape()));
  OpAttrs at;
  at.outer = outer;
  at.mid = mid;
  at.inner = inner;
  return x.tape().record(OpKind::Reduce, {x.id(), -1}, at);
}

inline Var reshape(Var x, Shape shape) {
  if (numel_of(shape) != x.value().numel())
    x.tape().shape_error(OpKind::Reshape, "cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  OpAttrs at;
  at.shape = std::move(shape);
  return x.tape().record(OpKind::Reshape, {x.id(), -1}, at);
}

inline Var conv2d(Var x, Var w) {
  detail::same_tape(x, w);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4)
    x.tape().shape_error(OpKind::Conv2d, "expected [N,C,H,W] input and [O,C,k,k] filter, got " + to_string(xs) +
                                              " and " + to_string(ws));
  if (xs[1] != ws[1])
    x.tape().shape_error(OpKind::Conv2d, "input channels " + std::to_string(xs[1]) +
                                              " do not match filter channels " + std::to_string(ws[1]));
  if (ws[2] != ws[3] || ws[2] % 2 == 0)
    x.tape().shape_error(OpKind::Conv2d, "filter must be square with odd size, got " + to_string(ws));
  return x.tape().record(OpKind::Conv2d, {x.id(), w.id()}, {});
}

inline Var conv_weight_grad(Var x, Var g, std::size_t kernel) {
  detail::same_tape(x, g);
  const Shape& xs = x.shape();
  const Shape& gs = g.shape();
  if (xs.size() != 4 || gs.size() != 4 || xs[0] != gs[0] || xs[2] != gs[2] || xs[3] != gs[3])
    x.tape().shape_error(OpKind::ConvWeightGrad, "incompatible " + to_string(xs) + " and " + to_string(gs));
  OpAttrs at;
  at.kernel = kernel;
  return x.tape().record(OpKind::ConvWeightGrad, {x.id(), g.id()}, at);
}

inline Var flip_transpose(Var w) {
  if (w.shape().size() != 4) w.tape().shape_error(OpKind::FlipTranspose, "expected rank-4 filter");
  return w.tape().record(OpKind::FlipTranspose, {w.id(), -1}, {});
}

inline Var avg_pool2(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] % 2 || s[3] % 2)
    x.tape().shape_error(OpKind::AvgPool2, "needs [N,C,H,W] with even H and W, got " + to_string(s));
  return x.tape().record(OpKind::AvgPool2, {x.id(), -1}, {});
}

inline Var upsample2(Var x) {
  if (x.shape().size() != 4) x.tape().shape_error(OpKind::Upsample2, "needs [N,C,H,W], got " + to_string(x.shape()));
  return x.tape().record(OpKind::Upsample2, {x.id(), -1}, {});
}

inline Var logsumexp_rows(Var x) {
  if (x.shape().size() != 2) x.tape().shape_error(OpKind::LogSumExpRows, "needs [N,K]");
  return x.tape().record(OpKind::LogSumExpRows, {x.id(), -1}, {});
}

inline Var softmax_rows(Var x) {
  if (x.shape().size() != 2) x.tape().shape_error(OpKind::SoftmaxRows, "needs [N,K]");
  return x.tape().record(OpKind::SoftmaxRows, {x.id(), -1}, {});
}

// Composites.

inline Var swish(Var x) { return mul(x, sigmoid(x)); }

inline Var sum(Var x) { return reduce(x, 1, 1, x.value().numel()); }

inline Var mean(Var x) {
  const auto n = x.value().numel();
  if (n == 0) throw UsageError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

/// Euclidean norm of all elements (shape {1}).
inline Var l2_norm(Var x) { return pow(sum(square(x)), 0.5); }

/// Per-sample sum over all trailing axes: [N, ...] -> [N].
inline Var sum_per_sample(Var x) {
  const Shape& s = x.shape();
  const std::size_t n = s.at(0);
  return reduce(x, 1, n, n == 0 ? 0 : x.value().numel() / n);
}

/// Repeat a [N] vector over the trailing axes of `shape`.
inline Var expand_per_sample(Var v, const Shape& shape) {
  const std::size_t n = shape.at(0);
  return broadcast(v, shape, 1, n, n == 0 ? 0 : numel_of(shape) / n);
}

inline Var flatten(Var x) {
  const std::size_t n = x.shape().at(0);
  return reshape(x, {n, n == 0 ? 0 : x.value().numel() / n});
}

// ---------------------------------------------------------------------------
// Vector-Jacobian products, written with the primitives above.

inline Var Tape::vjp(int node_id, int which, Var g) {
  const Node& n = node(node_id);
  Var self(this, node_id);
  Var pa = n.parents[0] >= 0 ? Var(this, n.parents[0]) : Var();
  Var pb = n.parents[1] >= 0 ? Var(this, n.parents[1]) : Var();
  const OpAttrs at = n.attrs;  // copy: recording may grow the deque
  const Shape pa_shape = pa.valid() ? pa.shape() : Shape{};
  switch (n.op) {
    case OpKind::Add: return g;
    case OpKind::Sub: return which == 0 ? g : scale(g, -1.0);
    case OpKind::Mul: return which == 0 ? mul(g, pb) : mul(g, pa);
    case OpKind::Affine: return scale(g, at.scale);
    case OpKind::Pow:
      if (at.scale == 2.0) return mul(g, scale(pa, 2.0));
      return mul(g, scale(pow(pa, at.scale - 1.0), at.scale));
    case OpKind::Sigmoid: return mul(g, mul(self, affine(self, -1.0, 1.0)));
    case OpKind::Softplus: return mul(g, sigmoid(pa));
    case OpKind::ClampMax: {
      const double c = at.scale;
      Tensor mask = kernels::map(pa.value(), [c](double x) { return x < c ? 1.0 : 0.0; });
      return mul(g, constant(std::move(mask)));
    }
    case OpKind::MatMul:
      if (which == 0) return at.trans_a ? matmul(pb, g, at.trans_b, true) : matmul(g, pb, false, !at.trans_b);
      return at.trans_b ? matmul(g, pa, true, at.trans_a) : matmul(pa, g, !at.trans_a, false);
    case OpKind::Broadcast: return reshape(reduce(g, at.outer, at.mid, at.inner), pa_shape);
    case OpKind::Reduce: return broadcast(g, pa_shape, at.outer, at.mid, at.inner);
    case OpKind::Reshape: return reshape(g, pa_shape);
    case OpKind::Conv2d:
      if (which == 0) return conv2d(g, flip_transpose(pb));
      return conv_weight_grad(pa, g, pb.shape()[2]);
    case OpKind::ConvWeightGrad:
      if (which == 0) return conv2d(pb, flip_transpose(g));
      return conv2d(pa, g);
    case OpKind::FlipTranspose: return flip_transpose(g);
    case OpKind::AvgPool2: return scale(upsample2(g), 0.25);
    case OpKind::Upsample2: return scale(avg_pool2(g), 4.0);
    case OpKind::LogSumExpRows: {
      const std::size_t rows = pa_shape[0], cols = pa_shape[1];
      return mul(broadcast(g, pa_shape, 1, rows, cols), softmax_rows(pa));
    }
    case OpKind::SoftmaxRows: {
      const std::size_t rows = pa_shape[0], cols = pa_shape[1];
      Var dot = reduce(mul(g, self), 1, rows, cols);
      return mul(self, sub(g, broadcast(dot, pa_shape, 1, rows, cols)));
    }
    case OpKind::Leaf:
    case OpKind::Constant: break;
  }
  throw UsageError("vjp requested for a leaf");
}

inline std::vector<Var> Tape::grad(Var output, std::span<const Var> wrt, bool create_graph) {
  if (&output.tape() != this) throw UsageError("grad: output lives on another tape");
  if (output.value().numel() != 1)
    throw UsageError("grad: output of shape " + to_string(output.shape()) +
                     " is not scalar; reduce it (e.g. sum or mean) first");
  const int out_id = output.id();
  const auto count = static_cast<std::size_t>(out_id) + 1;

  // reach[i]: node i depends on one of the requested inputs.
  std::vector<char> reach(count, 0);
  for (const Var& w : wrt) {
    if (&w.tape() != this) throw UsageError("grad: input lives on another tape");
    if (w.id() <= out_id) reach[static_cast<std::size_t>(w.id())] = 1;
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (reach[i]) continue;
    for (int p : nodes_[i].parents)
      if (p >= 0 && reach[static_cast<std::size_t>(p)]) reach[i] = 1;
  }

  const std::string saved_scope = scope_;
  const bool saved_mode = recording_first_order_;
  scope_ = "grad";
  recording_first_order_ = saved_mode || !create_graph;

  std::vector<std::optional<Var>> adj(count);
  if (reach[static_cast<std::size_t>(out_id)]) adj[static_cast<std::size_t>(out_id)] = constant(Tensor::full_like(output.value(), 1.0));

  try {
    for (int i = out_id; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      if (!adj[ui] || !reach[ui]) continue;
      const OpKind op = nodes_[ui].op;
      if (op == OpKind::Leaf || op == OpKind::Constant) continue;
      if (nodes_[ui].first_order_only) {
        throw CapabilityError("node " + std::to_string(i) + " (" + std::string(op_name(op)) +
                              ") was recorded by a first-order-only gradient pass and has no "
                              "re-differentiable backward; recompute with create_graph=true");
      }
      const std::array<int, 2> parents = nodes_[ui].parents;
      for (int which = 0; which < 2; ++which) {
        const int p = parents[static_cast<std::size_t>(which)];
        if (p < 0 || !reach[static_cast<std::size_t>(p)]) continue;
        Var contrib = vjp(i, which, *adj[ui]);
        auto& slot = adj[static_cast<std::size_t>(p)];
        slot = slot ? add(*slot, contrib) : contrib;
      }
    }
  } catch (...) {
    scope_ = saved_scope;
    recording_first_order_ = saved_mode;
    throw;
  }
  scope_ = saved_scope;
  recording_first_order_ = saved_mode;

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    const auto wi = static_cast<std::size_t>(w.id());
    if (wi < count && adj[wi]) result.push_back(*adj[wi]);
    else result.push_back(constant(Tensor::zeros_like(w.value())));
  }
  return result;
}

}  // namespace winn
