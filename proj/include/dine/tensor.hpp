// Dense row-major tensor and the value-level probability primitives
// (softmax, entropy, KL divergence) shared by every loss in the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dine/errors.hpp"

namespace dine {

/// Lower clamp applied before every log of a probability.
inline constexpr double kLogClamp = 1e-8;

inline double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (shape_size(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  /// Leading dimension; 1 for a rank-1 tensor viewed as a single row.
  std::size_t rows() const { return rank() >= 2 ? shape_[0] : 1; }
  /// Trailing dimension.
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& other, const char* op) const {
    if (shape_ != other.shape_)
      throw DimensionError(std::string(op) + ": shape " + shape_string(shape_) + " vs " +
                           shape_string(other.shape_));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_shape() const {
    for (std::size_t d : shape_)
      if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

/// Standard matrix product of an m×k and a k×n matrix.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul inner dimensions disagree: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.data()[i * k + p];
      if (av == 0.0) continue;
      const double* br = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

/// Row-wise softmax over the trailing axis, max-subtracted.
inline Tensor softmax(const Tensor& logits) {
  Tensor out = logits;
  const std::size_t k = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (std::size_t j = 0; j < k; ++j) row[j] /= total;
  }
  return out;
}

/// Throws ContractError unless `p` is a probability vector within `tol`.
inline void require_probability(std::span<const double> p, double tol = 1e-6) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= -tol) || !std::isfinite(v)) throw ContractError("probability entry is negative or not finite");
    total += v;
  }
  if (std::abs(total - 1.0) > tol)
    throw ContractError("probability vector sums to " + std::to_string(total));
}

/// Shannon entropy -sum p log p, with 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  require_probability(p);
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * clamped_log(v);
  return h;
}

inline double entropy(const Tensor& p) { return entropy(p.values()); }

/// KL(p || q) with q clamped below before the log.
inline double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw DimensionError("kl_div: lengths " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) d += p[i] * (clamped_log(p[i]) - clamped_log(q[i]));
  return d;
}

inline double kl_div(const Tensor& p, const Tensor& q) {
  p.require_same_shape(q, "kl_div");
  return kl_div(p.values(), q.values());
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Column means of an n×K matrix.
inline std::vector<double> column_mean(const Tensor& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += m(r, c);
  for (double& v : out) v /= static_cast<double>(m.rows());
  return out;
}

/// Gathers the given rows of a matrix into a new matrix.
inline Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx) {
  require_matrix(m, "gather_rows");
  Tensor out({idx.size(), m.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m.rows()) throw LookupError("row index " + std::to_string(idx[i]) + " out of range");
    std::copy_n(m.row(idx[i]).begin(), m.cols(), out.row(i).begin());
  }
  return out;
}

}  // namespace dine
