#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "iil/error.hpp"
#include "iil/tensor.hpp"
#include "json.hpp"

namespace iil {

/// One factor of a monomial: a planar offset from the anchor pixel and its exponent.
struct Factor {
  double du = 0.0;  // column offset
  double dv = 0.0;  // row offset
  double b = 1.0;

  bool operator==(const Factor&) const = default;
};

/// m(x) = prod_i x_i^{b_i}, with x_i read at the factor offsets.
struct Monomial {
  std::vector<Factor> factors;

  [[nodiscard]] std::size_t order() const { return factors.size(); }
  [[nodiscard]] std::vector<double> exponents() const {
    std::vector<double> b;
    b.reserve(factors.size());
    for (const auto& f : factors) b.push_back(f.b);
    return b;
  }
  [[nodiscard]] double max_radius() const {
    double r = 0.0;
    for (const auto& f : factors) r = std::max(r, std::hypot(f.du, f.dv));
    return r;
  }
  bool operator==(const Monomial&) const = default;
};

namespace detail {

inline void check_monomial_args(std::span<const double> values, std::span<const double> exponents) {
  if (values.size() != exponents.size()) throw ShapeError("monomial: values/exponents length mismatch");
  if (values.empty()) throw ShapeError("monomial: needs at least one factor");
  for (double v : values) {
    if (!(v > 0.0)) {
      throw PositivityError("monomial input " + std::to_string(v) +
                            " is not strictly positive; apply the input shift first");
    }
  }
}

inline double product_except(std::span<const double> values, std::span<const double> exponents,
                             std::size_t skip) {
  double p = 1.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (i != skip) p *= std::pow(values[i], exponents[i]);
  return p;
}

}  // namespace detail

inline double eval_monomial(std::span<const double> values, std::span<const double> exponents) {
  detail::check_monomial_args(values, exponents);
  double p = 1.0;
  for (std::size_t i = 0; i < values.size(); ++i) p *= std::pow(values[i], exponents[i]);
  return p;
}

/// dm/dx_j = b_j x_j^{b_j - 1} prod_{i != j} x_i^{b_i}
inline double grad_values(std::span<const double> values, std::span<const double> exponents, std::size_t j) {
  detail::check_monomial_args(values, exponents);
  if (j >= values.size()) throw ShapeError("grad_values: factor index out of range");
  const double bj = exponents[j];
  if (bj == 0.0) return 0.0;
  return bj * std::pow(values[j], bj - 1.0) * detail::product_except(values, exponents, j);
}

/// dm/db_j = ln(x_j) x_j^{b_j} prod_{i != j} x_i^{b_i}
inline double grad_exponents(std::span<const double> values, std::span<const double> exponents,
                             std::size_t j) {
  detail::check_monomial_args(values, exponents);
  if (j >= values.size()) throw ShapeError("grad_exponents: factor index out of range");
  return std::log(values[j]) * std::pow(values[j], exponents[j]) *
         detail::product_except(values, exponents, j);
}

inline constexpr double kDefaultShiftEpsilon = 1e-3;

/// Per-channel shift statistics: x~ = max(eps, x - x_min + 1).
struct ShiftStats {
  std::vector<double> x_min;
  double epsilon = kDefaultShiftEpsilon;

  [[nodiscard]] std::size_t channels() const { return x_min.size(); }
};

/// Channel minima over batch, height and width of training features.
inline ShiftStats fit_shift(const Tensor& features, double epsilon = kDefaultShiftEpsilon) {
  if (features.rank() != 4) throw ShapeError("fit_shift expects rank-4 features");
  if (features.empty()) throw ShapeError("fit_shift on an empty feature set");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ShapeError("fit_shift: epsilon must lie in (0, 1)");
  const std::size_t ch = features.dim(3);
  ShiftStats stats{std::vector<double>(ch, std::numeric_limits<double>::infinity()), epsilon};
  for (std::size_t i = 0; i < features.size(); ++i) {
    double& m = stats.x_min[i % ch];
    m = std::min(m, features[i]);
  }
  return stats;
}

inline void require_shift_channels(const Tensor& features, const ShiftStats& stats) {
  if (features.rank() != 4) throw ShapeError("shift expects rank-4 features");
  if (features.dim(3) != stats.channels()) {
    throw ShapeError("shift: feature channels " + std::to_string(features.dim(3)) +
                     " vs fitted channels " + std::to_string(stats.channels()));
  }
}

inline Tensor apply_shift(const Tensor& features, const ShiftStats& stats) {
  require_shift_channels(features, stats);
  const std::size_t ch = stats.channels();
  Tensor out(features.shape());
  for (std::size_t i = 0; i < features.size(); ++i)
    out[i] = std::max(stats.epsilon, features[i] - stats.x_min[i % ch] + 1.0);
  return out;
}

/// Upstream passes where the affine branch is active; clamped entries get zero.
inline Tensor apply_shift_grad(const Tensor& upstream, const Tensor& features, const ShiftStats& stats) {
  require_shift_channels(features, stats);
  require_same_shape(upstream, features, "apply_shift_grad");
  const std::size_t ch = stats.channels();
  Tensor out(features.shape());
  for (std::size_t i = 0; i < features.size(); ++i)
    out[i] = (features[i] - stats.x_min[i % ch] + 1.0 > stats.epsilon) ? upstream[i] : 0.0;
  return out;
}

/// All nonnegative integer exponent vectors of length k with sum <= group_order,
/// in lexicographic order. Count is C(k + group_order, k).
inline std::vector<std::vector<int>> enumerate_monomial_exponents(int k, int group_order) {
  if (k < 1 || group_order < 1) throw ShapeError("enumerate_monomial_exponents: need K >= 1 and |G| >= 1");
  std::vector<std::vector<int>> out;
  std::vector<int> current(static_cast<std::size_t>(k), 0);
  auto recurse = [&](auto&& self, std::size_t slot, int budget) -> void {
    if (slot == current.size()) {
      out.push_back(current);
      return;
    }
    for (int e = 0; e <= budget; ++e) {
      current[slot] = e;
      self(self, slot + 1, budget - e);
    }
    current[slot] = 0;
  };
  recurse(recurse, 0, group_order);
  return out;
}

// JSON schema: [{"factors": [{"du": .., "dv": .., "b": ..}, ...]}, ...]

inline nlohmann::json monomials_to_json(const std::vector<Monomial>& monomials) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : monomials) {
    nlohmann::json factors = nlohmann::json::array();
    for (const auto& f : m.factors) factors.push_back({{"du", f.du}, {"dv", f.dv}, {"b", f.b}});
    arr.push_back({{"factors", factors}});
  }
  return arr;
}

inline std::vector<Monomial> monomials_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw FormatError("monomial set must be a JSON array");
  std::vector<Monomial> out;
  for (const auto& m : arr) {
    if (!m.is_object() || !m.contains("factors") || !m["factors"].is_array())
      throw FormatError("monomial entry needs a \"factors\" array");
    Monomial mono;
    for (const auto& f : m["factors"]) {
      if (!f.contains("du") || !f.contains("dv") || !f.contains("b"))
        throw FormatError("monomial factor needs du, dv and b");
      mono.factors.push_back({f["du"].get<double>(), f["dv"].get<double>(), f["b"].get<double>()});
    }
    if (mono.factors.empty()) throw FormatError("monomial with no factors");
    out.push_back(std::move(mono));
  }
  return out;
}

}  // namespace iil
