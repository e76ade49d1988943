#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "iil/error.hpp"

namespace iil {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of doubles with up to five axes.
///
/// Checked access goes through at(); hot loops index data() directly using
/// the row-major strides.
class Tensor {
 public:
  static constexpr std::size_t kMaxRank = 5;

  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_rank();
    data_.assign(shape_product(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (shape_product(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  /// Rank-2 tensor from nested rows, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range");
    return shape_[axis];
  }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::span<double> data() { return data_; }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] double* raw() { return data_.data(); }
  [[nodiscard]] const double* raw() const { return data_.data(); }
  [[nodiscard]] const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  /// Flat offset of a full index; rejects wrong arity and out-of-bounds entries.
  [[nodiscard]] std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index arity " + std::to_string(index.size()) + " for tensor of shape " +
                       shape_string(shape_));
    }
    std::size_t flat = 0;
    for (std::size_t a = 0; a < shape_.size(); ++a) {
      if (index[a] >= shape_[a]) {
        throw ShapeError("index " + std::to_string(index[a]) + " out of bounds on axis " +
                         std::to_string(a) + " of shape " + shape_string(shape_));
      }
      flat = flat * shape_[a] + index[a];
    }
    return flat;
  }

  template <typename... I>
  double& at(I... index) {
    const std::size_t idx[] = {static_cast<std::size_t>(index)...};
    return data_[offset(idx)];
  }
  template <typename... I>
  [[nodiscard]] double at(I... index) const {
    const std::size_t idx[] = {static_cast<std::size_t>(index)...};
    return data_[offset(idx)];
  }

  /// Same data, new shape with equal element count.
  [[nodiscard]] Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  [[nodiscard]] bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  void check_rank() const {
    if (shape_.size() > kMaxRank) throw ShapeError("tensor rank above 5: " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

/// Sums over the listed axes; the reduced axes are dropped from the shape.
inline Tensor sum_axes(const Tensor& a, std::span<const std::size_t> axes) {
  std::vector<bool> reduce(a.rank(), false);
  for (std::size_t ax : axes) {
    if (ax >= a.rank()) throw ShapeError("sum_axes: axis " + std::to_string(ax) + " out of range");
    reduce[ax] = true;
  }
  Shape out_shape;
  for (std::size_t ax = 0; ax < a.rank(); ++ax)
    if (!reduce[ax]) out_shape.push_back(a.shape()[ax]);
  Tensor out(out_shape);
  std::vector<std::size_t> idx(a.rank(), 0);
  for (std::size_t flat = 0; flat < a.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t ax = 0; ax < a.rank(); ++ax)
      if (!reduce[ax]) o = o * a.shape()[ax] + idx[ax];
    out[o] += a[flat];
    for (std::size_t ax = a.rank(); ax-- > 0;) {
      if (++idx[ax] < a.shape()[ax]) break;
      idx[ax] = 0;
    }
  }
  return out;
}

inline Tensor sum_axes(const Tensor& a, std::initializer_list<std::size_t> axes) {
  return sum_axes(a, std::span<const std::size_t>(axes.begin(), axes.size()));
}

struct MaxResult {
  Tensor values;
  std::vector<std::size_t> argmax;  // flat over values, index along the reduced axis
};

/// Max over one axis, recording which slot won. Ties go to the lowest index.
inline MaxResult max_axis(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("max_axis: axis out of range");
  const std::size_t n = a.shape()[axis];
  if (n == 0) throw ShapeError("max_axis: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t ax = 0; ax < axis; ++ax) outer *= a.shape()[ax];
  for (std::size_t ax = axis + 1; ax < a.rank(); ++ax) inner *= a.shape()[ax];
  Shape out_shape;
  for (std::size_t ax = 0; ax < a.rank(); ++ax)
    if (ax != axis) out_shape.push_back(a.shape()[ax]);
  MaxResult r{Tensor(out_shape), std::vector<std::size_t>(outer * inner, 0)};
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const double* base = a.raw() + o * n * inner + i;
      std::size_t best = 0;
      for (std::size_t k = 1; k < n; ++k)
        if (base[k * inner] > base[best * inner]) best = k;
      r.values[o * inner + i] = base[best * inner];
      r.argmax[o * inner + i] = best;
    }
  }
  return r;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.raw() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b.raw() + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor identity(std::size_t n) {
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] = 1.0;
  return out;
}

}  // namespace iil
