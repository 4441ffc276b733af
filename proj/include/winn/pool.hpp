#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "winn/random.hpp"

namespace winn {

/// Append-only store of self-generated negatives, each tagged with the stage and cascade that made it.
class PseudoNegativePool {
 public:
  PseudoNegativePool() = default;
  explicit PseudoNegativePool(Shape sample_shape) : shape_(std::move(sample_shape)), row_(numel_of(shape_)) {}

  const Shape& sample_shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return stages_.size(); }
  bool empty() const noexcept { return stages_.empty(); }

  void append(const Tensor& batch, std::size_t stage, std::size_t cascade) {
    if (batch.shape().empty() || Shape(batch.shape().begin() + 1, batch.shape().end()) != shape_)
      throw UsageError("pool: batch " + to_string(batch.shape()) + " does not hold samples of shape " +
                       to_string(shape_));
    if (!stages_.empty() && stage < stages_.back())
      throw UsageError("pool: stage " + std::to_string(stage) + " appended after stage " +
                       std::to_string(stages_.back()));
    if (!batch.all_finite()) throw NumericError("pool: refusing non-finite samples");
    data_.insert(data_.end(), batch.values().begin(), batch.values().end());
    stages_.insert(stages_.end(), batch.shape()[0], stage);
    cascades_.insert(cascades_.end(), batch.shape()[0], cascade);
  }

  Tensor item(std::size_t i) const { return gather(std::span<const std::size_t>(&i, 1)); }

  Tensor gather(std::span<const std::size_t> idx) const {
    Shape s{idx.size()};
    s.insert(s.end(), shape_.begin(), shape_.end());
    Tensor out(s);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] >= size()) throw UsageError("pool: index out of range");
      std::copy_n(data_.data() + idx[k] * row_, row_, out.data() + k * row_);
    }
    return out;
  }

  /// Uniform with replacement over every stored record.
  Tensor sample(std::size_t count, Rng& rng) const {
    if (empty()) throw UsageError("pool: cannot sample from an empty pool");
    std::vector<std::size_t> idx(count);
    for (auto& i : idx) i = uniform_index(rng, size());
    return gather(idx);
  }

  /// Uniform with replacement over the records listed in `eligible`.
  Tensor sample_from(std::span<const std::size_t> eligible, std::size_t count, Rng& rng) const {
    if (eligible.empty()) throw UsageError("pool: cannot sample from an empty subset");
    std::vector<std::size_t> idx(count);
    for (auto& i : idx) i = eligible[uniform_index(rng, eligible.size())];
    return gather(idx);
  }

  /// All indices when size <= cap, otherwise `cap` distinct indices drawn uniformly (ascending order).
  std::vector<std::size_t> capped_subset(std::size_t cap, Rng& rng) const {
    std::vector<std::size_t> all(size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (size() <= cap) return all;
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < cap; ++i) std::swap(all[i], all[i + uniform_index(rng, size() - i)]);
    all.resize(cap);
    std::sort(all.begin(), all.end());
    return all;
  }

  /// Samples with stage tag == stage, in insertion order.
  Tensor stage_samples(std::size_t stage) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i)
      if (stages_[i] == stage) idx.push_back(i);
    return gather(idx);
  }

  const std::vector<double>& raw() const noexcept { return data_; }
  const std::vector<std::size_t>& stages() const noexcept { return stages_; }
  const std::vector<std::size_t>& cascades() const noexcept { return cascades_; }

  /// Rebuilds a pool from its parts (checkpoint restore).
  static PseudoNegativePool restore(Shape shape, std::vector<double> data, std::vector<std::size_t> stages,
                                    std::vector<std::size_t> cascades) {
    PseudoNegativePool p(std::move(shape));
    if (stages.size() != cascades.size() || data.size() != stages.size() * p.row_)
      throw UsageError("pool: inconsistent record arrays");
    for (std::size_t i = 1; i < stages.size(); ++i)
      if (stages[i] < stages[i - 1]) throw UsageError("pool: stage tags must be non-decreasing");
    p.data_ = std::move(data);
    p.stages_ = std::move(stages);
    p.cascades_ = std::move(cascades);
    return p;
  }

  friend bool operator==(const PseudoNegativePool& a, const PseudoNegativePool& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_ && a.stages_ == b.stages_ && a.cascades_ == b.cascades_;
  }

 private:
  Shape shape_;
  std::size_t row_ = 0;
  std::vector<double> data_;
  std::vector<std::size_t> stages_;
  std::vector<std::size_t> cascades_;
};

/// Energy distance between the row sets of two batches (Euclidean norm, U-statistics for the
/// within-set terms): 2 E|X-Y| - E|X-X'| - E|Y-Y'|.
inline double energy_distance(const Tensor& a, const Tensor& b) {
  const std::size_t na = a.dim(0), nb = b.dim(0), d = a.row_size();
  if (na < 2 || nb < 2) throw UsageError("energy_distance: need at least two samples per set");
  if (b.row_size() != d) throw UsageError("energy_distance: sample sizes differ");
  auto dist = [&](const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
    double s = 0.0;
    const double* p = x.data() + i * d;
    const double* q = y.data() + j * d;
    for (std::size_t k = 0; k < d; ++k) s += (p[k] - q[k]) * (p[k] - q[k]);
    return std::sqrt(s);
  };
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) xy += dist(a, i, b, j);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = i + 1; j < na; ++j) xx += dist(a, i, a, j);
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t j = i + 1; j < nb; ++j) yy += dist(b, i, b, j);
  xy /= static_cast<double>(na * nb);
  xx /= static_cast<double>(na * (na - 1)) / 2.0;
  yy /= static_cast<double>(nb * (nb - 1)) / 2.0;
  return 2.0 * xy - xx - yy;
}

}  // namespace winn
