#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "winn/error.hpp"

namespace winn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// {count, sample_shape...}
inline Shape batch_shape(std::size_t count, const Shape& sample_shape) {
  Shape s{count};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  return s;
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

/// Dense row-major array of doubles. Scalars use shape {1}.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(numel_of(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != numel_of(shape_)) {
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + winn::to_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }
  static Tensor full_like(const Tensor& t, double v) { return Tensor(t.shape_, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (data_.size() != 1) throw UsageError("item() on tensor of shape " + winn::to_string(shape_));
    return data_[0];
  }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    Tensor out;
    out.shape_ = std::move(shape);
    out.validate_shape();
    if (numel_of(out.shape_) != data_.size()) {
      throw ConfigError("cannot reshape " + winn::to_string(shape_) + " to " + winn::to_string(out.shape_));
    }
    out.data_ = data_;
    return out;
  }

  /// Number of elements per leading-axis row.
  std::size_t row_size() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

  /// Copy of rows [begin, end) along the leading axis.
  Tensor rows(std::size_t begin, std::size_t end) const {
    if (shape_.empty() || begin > end || end > shape_[0]) throw UsageError("row range out of bounds");
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t rs = row_size();
    std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * rs),
                          data_.begin() + static_cast<std::ptrdiff_t>(end * rs));
    return Tensor(std::move(s), std::move(d));
  }

  std::span<const double> row(std::size_t i) const {
    const std::size_t rs = row_size();
    return std::span<const double>(data_).subspan(i * rs, rs);
  }
  std::span<double> row(std::size_t i) {
    const std::size_t rs = row_size();
    return std::span<double>(data_).subspan(i * rs, rs);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    // Only the batch axis may be zero (empty batches).
    for (std::size_t i = 1; i < shape_.size(); ++i) {
      if (shape_[i] == 0) {
        throw ConfigError("tensor dimensions after the leading axis must be positive: " +
                          winn::to_string(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Stack equally shaped samples along a new leading axis.
inline Tensor stack_rows(std::span<const Tensor> samples, const Shape& sample_shape) {
  Shape s{samples.size()};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  std::vector<double> d;
  d.reserve(numel_of(s));
  for (const Tensor& t : samples) {
    if (t.numel() != numel_of(sample_shape)) throw ConfigError("stack_rows: sample size mismatch");
    d.insert(d.end(), t.storage().begin(), t.storage().end());
  }
  return Tensor(std::move(s), std::move(d));
}

/// Concatenate along the leading axis.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0) return b;
  if (b.rank() == 0) return a;
  Shape sa(a.shape().begin() + 1, a.shape().end());
  Shape sb(b.shape().begin() + 1, b.shape().end());
  if (sa != sb) throw ConfigError("concat_rows: trailing shapes differ");
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<double> d = a.storage();
  d.insert(d.end(), b.storage().begin(), b.storage().end());
  return Tensor(std::move(s), std::move(d));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw UsageError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace winn
