#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iil/backbone.hpp"
#include "iil/ii_layer.hpp"
#include "iil/monomial.hpp"
#include "iil/sampling.hpp"
#include "iil/tensor.hpp"

namespace iil {

// Central finite-difference suites for every hand-written backward pass.
// Each case draws a random configuration, contracts the output with a random
// weight tensor to get a scalar, and compares the analytic gradient of that
// scalar against (f(x + h) - f(x - h)) / 2h entry by entry.

inline constexpr double kGradTolerance = 1e-5;
inline constexpr double kFdStep = 1e-5;

struct GradCheckResult {
  std::string name;
  std::size_t cases = 0;
  double max_rel_error = 0.0;
  double tolerance = kGradTolerance;

  [[nodiscard]] bool passed() const { return cases > 0 && max_rel_error < tolerance; }
};

/// ||a - n||_inf / max(||a||_inf, ||n||_inf, 1e-12).
inline double gradient_rel_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("gradient_rel_error: length mismatch");
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

/// Central differences of a scalar function of `x`, perturbing x in place.
inline std::vector<double> central_difference(const std::function<double()>& f, std::span<double> x,
                                              double h = kFdStep) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double contract(const Tensor& a, const Tensor& w) {
  require_same_shape(a, w, "contract");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * w[i];
  return s;
}

namespace detail {

inline Tensor uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data()) v = d(rng);
  return t;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Runs `cases` draws of `one_case`, which returns the case's relative error.
inline GradCheckResult run_suite(std::string name, std::size_t cases, std::uint64_t seed,
                                 const std::function<double(std::mt19937_64&)>& one_case) {
  GradCheckResult r{std::move(name), 0, 0.0, kGradTolerance};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < cases; ++i) {
    r.max_rel_error = std::max(r.max_rel_error, one_case(rng));
    ++r.cases;
  }
  return r;
}

}  // namespace detail

inline GradCheckResult gradcheck_monomial_values(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("eval_monomial d/dx", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t k = detail::pick(rng, 1, 4);
    std::vector<double> x = detail::uniform_tensor({k}, 0.2, 3.0, rng).values();
    const std::vector<double> b = detail::uniform_tensor({k}, 0.1, 3.0, rng).values();
    std::vector<double> analytic(k);
    for (std::size_t j = 0; j < k; ++j) analytic[j] = grad_values(x, b, j);
    const auto numeric = central_difference([&] { return eval_monomial(x, b); }, x);
    return gradient_rel_error(analytic, numeric);
  });
}

inline GradCheckResult gradcheck_monomial_exponents(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("eval_monomial d/db", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t k = detail::pick(rng, 1, 4);
    const std::vector<double> x = detail::uniform_tensor({k}, 0.2, 3.0, rng).values();
    std::vector<double> b = detail::uniform_tensor({k}, 0.1, 3.0, rng).values();
    std::vector<double> analytic(k);
    for (std::size_t j = 0; j < k; ++j) analytic[j] = grad_exponents(x, b, j);
    const auto numeric = central_difference([&] { return eval_monomial(x, b); }, b);
    return gradient_rel_error(analytic, numeric);
  });
}

inline GradCheckResult gradcheck_apply_shift(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("apply_shift", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t ch = detail::pick(rng, 1, 3);
    const Shape shape{detail::pick(rng, 1, 2), detail::pick(rng, 2, 4), detail::pick(rng, 2, 4), ch};
    ShiftStats stats{detail::uniform_tensor({ch}, 0.0, 1.0, rng).values(), kDefaultShiftEpsilon};
    // Keep every entry well away from the clamp kink so the step never crosses it.
    Tensor x = detail::uniform_tensor(shape, -1.0, 1.0, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double knee = stats.x_min[i % ch] - 1.0 + stats.epsilon;
      if (std::abs(x[i] - knee) < 1e-2) x[i] = knee + 0.5;
    }
    const Tensor w = detail::uniform_tensor(shape, -1.0, 1.0, rng);
    const Tensor analytic = apply_shift_grad(w, x, stats);
    const auto numeric = central_difference([&] { return contract(apply_shift(x, stats), w); }, x.data());
    return gradient_rel_error(analytic.data(), numeric);
  });
}

inline GradCheckResult gradcheck_bilinear_sample(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("bilinear_sample", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t rows = detail::pick(rng, 1, 6), cols = detail::pick(rng, 1, 6);
    Tensor map = detail::uniform_tensor({rows, cols}, -1.0, 1.0, rng);
    // Coordinates reach past the border to cover the clamp path.
    std::uniform_real_distribution<double> r(-1.5, static_cast<double>(rows) + 0.5);
    std::uniform_real_distribution<double> c(-1.5, static_cast<double>(cols) + 0.5);
    const SampleCoord at{r(rng), c(rng)};
    const double w = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    Tensor analytic({rows, cols});
    for (const auto& g : bilinear_sample_grad(map, at, w)) analytic.at(g.row, g.col) += g.value;
    const auto numeric = central_difference([&] { return w * bilinear_sample(map, at); }, map.data());
    return gradient_rel_error(analytic.data(), numeric);
  });
}

inline GradCheckResult gradcheck_lift(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("lifting conv", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t k = detail::pick(rng, 0, 1) ? 3 : 5;
    const int n = detail::pick(rng, 0, 1) ? 4 : 8;
    const std::size_t in = detail::pick(rng, 1, 2), out = detail::pick(rng, 1, 2);
    const std::size_t side = k + detail::pick(rng, 0, 2);
    LiftingConvLayer layer = LiftingConvLayer::random(in, out, k, n, rng);
    layer.bias = detail::uniform_tensor({out}, -0.5, 0.5, rng);
    Tensor x = detail::uniform_tensor({detail::pick(rng, 1, 2), side, side, in}, -1.0, 1.0, rng);
    const Tensor w = detail::uniform_tensor(lift_forward(x, layer).shape(), -1.0, 1.0, rng);
    const LayerGradients g = lift_backward(x, layer, w);
    auto f = [&] { return contract(lift_forward(x, layer), w); };
    return std::max({gradient_rel_error(g.input.data(), central_difference(f, x.data())),
                     gradient_rel_error(g.params[0].data(), central_difference(f, layer.kernels.data())),
                     gradient_rel_error(g.params[1].data(), central_difference(f, layer.bias.data()))});
  });
}

inline GradCheckResult gradcheck_gconv(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("group conv", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t k = 3;
    const int n = detail::pick(rng, 0, 3) ? 4 : 8;
    const std::size_t in = detail::pick(rng, 1, 2), out = detail::pick(rng, 1, 2);
    const std::size_t side = k + detail::pick(rng, 0, 1);
    GroupConvLayer layer = GroupConvLayer::random(in, out, k, n, rng);
    layer.bias = detail::uniform_tensor({out}, -0.5, 0.5, rng);
    Tensor x = detail::uniform_tensor({1, static_cast<std::size_t>(n), side, side, in}, -1.0, 1.0, rng);
    const Tensor w = detail::uniform_tensor(gconv_forward(x, layer).shape(), -1.0, 1.0, rng);
    const LayerGradients g = gconv_backward(x, layer, w);
    auto f = [&] { return contract(gconv_forward(x, layer), w); };
    return std::max({gradient_rel_error(g.input.data(), central_difference(f, x.data())),
                     gradient_rel_error(g.params[0].data(), central_difference(f, layer.kernels.data())),
                     gradient_rel_error(g.params[1].data(), central_difference(f, layer.bias.data()))});
  });
}

inline GradCheckResult gradcheck_relu(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("relu", cases, seed, [](std::mt19937_64& rng) {
    Tensor x = detail::uniform_tensor({detail::pick(rng, 1, 30)}, -1.0, 1.0, rng);
    for (double& v : x.data())
      if (std::abs(v) < 1e-2) v += 0.1;
    const Tensor w = detail::uniform_tensor(x.shape(), -1.0, 1.0, rng);
    const Tensor analytic = relu_backward(x, w);
    const auto numeric = central_difference([&] { return contract(relu(x), w); }, x.data());
    return gradient_rel_error(analytic.data(), numeric);
  });
}

inline GradCheckResult gradcheck_orientation_maxpool(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("orientation max-pool", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t n = detail::pick(rng, 0, 1) ? 4 : 8;
    const Shape shape{detail::pick(rng, 1, 2), n, detail::pick(rng, 1, 3), detail::pick(rng, 1, 3), detail::pick(rng, 1, 2)};
    // Distinct values on a coarse lattice: the winner never changes under the step.
    Tensor x(shape);
    std::vector<double> pool(x.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = 0.05 * static_cast<double>(i);
    std::shuffle(pool.begin(), pool.end(), rng);
    x = Tensor(shape, pool);
    const MaxResult pooled = orientation_maxpool(x);
    const Tensor w = detail::uniform_tensor(pooled.values.shape(), -1.0, 1.0, rng);
    const Tensor analytic = orientation_maxpool_backward(shape, pooled, w);
    const auto numeric = central_difference([&] { return contract(orientation_maxpool(x).values, w); }, x.data());
    return gradient_rel_error(analytic.data(), numeric);
  });
}

inline GradCheckResult gradcheck_global_avg_pool(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("global average pool", cases, seed, [](std::mt19937_64& rng) {
    const Shape shape{detail::pick(rng, 1, 2), detail::pick(rng, 1, 4), detail::pick(rng, 1, 4), detail::pick(rng, 1, 3)};
    Tensor x = detail::uniform_tensor(shape, -1.0, 1.0, rng);
    const Tensor w = detail::uniform_tensor({shape[0], shape[3]}, -1.0, 1.0, rng);
    const Tensor analytic = global_avg_pool_backward(shape, w);
    const auto numeric = central_difference([&] { return contract(global_avg_pool(x), w); }, x.data());
    return gradient_rel_error(analytic.data(), numeric);
  });
}

inline GradCheckResult gradcheck_dense(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("dense", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t nb = detail::pick(rng, 1, 4), in = detail::pick(rng, 1, 6), out = detail::pick(rng, 1, 4);
    DenseLayer layer = DenseLayer::random(in, out, rng);
    layer.bias = detail::uniform_tensor({out}, -0.5, 0.5, rng);
    Tensor x = detail::uniform_tensor({nb, in}, -1.0, 1.0, rng);
    const Tensor w = detail::uniform_tensor({nb, out}, -1.0, 1.0, rng);
    const LayerGradients g = dense_backward(x, layer, w);
    auto f = [&] { return contract(dense_forward(x, layer), w); };
    return std::max({gradient_rel_error(g.input.data(), central_difference(f, x.data())),
                     gradient_rel_error(g.params[0].data(), central_difference(f, layer.weights.data())),
                     gradient_rel_error(g.params[1].data(), central_difference(f, layer.bias.data()))});
  });
}

inline GradCheckResult gradcheck_softmax_xent(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("softmax cross-entropy", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t nb = detail::pick(rng, 1, 4), nc = detail::pick(rng, 2, 5);
    Tensor logits = detail::uniform_tensor({nb, nc}, -2.0, 2.0, rng);
    std::vector<int> labels(nb);
    for (int& l : labels) l = static_cast<int>(detail::pick(rng, 0, nc - 1));
    const Tensor analytic = softmax_xent(logits, labels).grad_logits;
    const auto numeric = central_difference([&] { return softmax_xent(logits, labels).loss; }, logits.data());
    return gradient_rel_error(analytic.data(), numeric);
  });
}

inline GradCheckResult gradcheck_feature_norm(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("feature normalization", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t nb = detail::pick(rng, 3, 6), d = detail::pick(rng, 1, 4);
    Tensor x = detail::uniform_tensor({nb, d}, -1.0, 3.0, rng);
    const Tensor w = detail::uniform_tensor({nb, d}, -1.0, 1.0, rng);
    const NormStats s = feature_stats(x);
    const Tensor analytic = normalize_features_backward(normalize_features(x, s), s, w);
    const auto numeric =
        central_difference([&] { return contract(normalize_features(x, feature_stats(x)), w); }, x.data());
    return gradient_rel_error(analytic.data(), numeric);
  });
}

namespace detail {

inline IILayerState random_ii_state(std::size_t channels, double r_max, std::mt19937_64& rng) {
  IILayerState state;
  state.r_max = r_max;
  state.sampling = RotationGroupSampling::uniform(pick(rng, 0, 1) ? 4 : 8);
  state.shift = ShiftStats{std::vector<double>(channels, 0.0), kDefaultShiftEpsilon};
  std::uniform_real_distribution<double> unit(0.0, 1.0), expo(0.5, 2.0);
  const std::size_t nm = pick(rng, 1, 3);
  for (std::size_t m = 0; m < nm; ++m) {
    Monomial mono;
    const std::size_t nf = pick(rng, 1, 3);
    for (std::size_t f = 0; f < nf; ++f) {
      const double radius = r_max * std::sqrt(unit(rng)), theta = 2.0 * std::numbers::pi * unit(rng);
      mono.factors.push_back({radius * std::cos(theta), radius * std::sin(theta), expo(rng)});
    }
    state.monomials.push_back(std::move(mono));
  }
  return state;
}

}  // namespace detail

/// Full II backward: gradients w.r.t. the (positive) feature map and every exponent.
inline GradCheckResult gradcheck_ii_backward(std::size_t cases, std::uint64_t seed) {
  return detail::run_suite("ii_backward", cases, seed, [](std::mt19937_64& rng) {
    const std::size_t ch = detail::pick(rng, 1, 2);
    IILayerState state = detail::random_ii_state(ch, 2.0, rng);
    Tensor x = detail::uniform_tensor({1, detail::pick(rng, 3, 5), detail::pick(rng, 3, 5), ch}, 0.5, 2.0, rng);
    const Tensor w = detail::uniform_tensor({1, ch, state.monomials.size()}, -1.0, 1.0, rng);
    const IIGradients g = ii_backward(x, state, w);
    auto f = [&] { return contract(ii_forward(x, state), w); };
    double err = gradient_rel_error(g.features.data(), central_difference(f, x.data()));
    std::vector<double> analytic_b, numeric_b;
    for (std::size_t m = 0; m < state.monomials.size(); ++m)
      for (std::size_t i = 0; i < state.monomials[m].factors.size(); ++i) {
        double& b = state.monomials[m].factors[i].b;
        analytic_b.push_back(g.exponents[m][i]);
        numeric_b.push_back(central_difference(f, std::span<double>(&b, 1))[0]);
      }
    return std::max(err, gradient_rel_error(analytic_b, numeric_b));
  });
}

/// Every suite with `cases` draws each.
inline std::vector<GradCheckResult> run_all_gradchecks(std::size_t cases = 100, std::uint64_t seed = 7) {
  return {gradcheck_monomial_values(cases, seed),     gradcheck_monomial_exponents(cases, seed + 1),
          gradcheck_apply_shift(cases, seed + 2),     gradcheck_bilinear_sample(cases, seed + 3),
          gradcheck_lift(cases, seed + 4),            gradcheck_gconv(cases, seed + 5),
          gradcheck_relu(cases, seed + 6),            gradcheck_orientation_maxpool(cases, seed + 7),
          gradcheck_global_avg_pool(cases, seed + 8), gradcheck_dense(cases, seed + 9),
          gradcheck_softmax_xent(cases, seed + 10),   gradcheck_feature_norm(cases, seed + 12),
          gradcheck_ii_backward(cases, seed + 11)};
}

}  // namespace iil
