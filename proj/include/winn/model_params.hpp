#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "winn/tape.hpp"

namespace winn {

/// Top-layer weights combine trunk features into scores; everything else is internal.
enum class ParamRole { Internal, TopLayer, Norm };

struct ParamEntry {
  std::string name;
  Tensor value;
  ParamRole role = ParamRole::Internal;
};

/// Named, ordered parameter tensors of one classifier.
class ModelParams {
 public:
  void add(std::string name, Tensor value, ParamRole role) {
    if (find(name) >= 0) throw ConfigError("duplicate parameter name '" + name + "'");
    entries_.push_back({std::move(name), std::move(value), role});
  }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::vector<ParamEntry>& entries() noexcept { return entries_; }
  const ParamEntry& operator[](std::size_t i) const { return entries_.at(i); }
  ParamEntry& operator[](std::size_t i) { return entries_.at(i); }

  int find(const std::string& name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const ParamEntry& e) { return e.name == name; });
    return it == entries_.end() ? -1 : static_cast<int>(it - entries_.begin());
  }

  const Tensor& value(const std::string& name) const {
    const int i = find(name);
    if (i < 0) throw UsageError("no parameter named '" + name + "'");
    return entries_[static_cast<std::size_t>(i)].value;
  }
  Tensor& value(const std::string& name) {
    const int i = find(name);
    if (i < 0) throw UsageError("no parameter named '" + name + "'");
    return entries_[static_cast<std::size_t>(i)].value;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  /// Place every parameter on the tape as a leaf, in order.
  std::vector<Var> bind(Tape& tape, bool requires_grad = true) const {
    std::vector<Var> vars;
    vars.reserve(entries_.size());
    for (const auto& e : entries_) vars.push_back(tape.leaf(e.value, e.name, requires_grad));
    return vars;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.role != y.role || !(x.value == y.value)) return false;
    }
    return true;
  }

 private:
  std::vector<ParamEntry> entries_;
};

/// Gradient tensors aligned with a ModelParams.
using ParamGrads = std::vector<Tensor>;

inline ParamGrads values_of(std::span<const Var> vars) {
  ParamGrads out;
  out.reserve(vars.size());
  for (const Var& v : vars) out.push_back(v.value());
  return out;
}

}  // namespace winn
