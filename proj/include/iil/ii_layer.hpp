#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "iil/error.hpp"
#include "iil/monomial.hpp"
#include "iil/sampling.hpp"
#include "iil/tensor.hpp"
#include "json.hpp"

namespace iil {

/// Discretization of the rotation integral: phi_k = 2 pi k / N.
struct RotationGroupSampling {
  int num_angles = 8;
  std::vector<double> angles;

  static RotationGroupSampling uniform(int num_angles) {
    if (num_angles < 1) throw ShapeError("rotation sampling needs at least one angle");
    RotationGroupSampling s{num_angles, {}};
    for (int k = 0; k < num_angles; ++k) s.angles.push_back(2.0 * std::numbers::pi * k / num_angles);
    return s;
  }
};

inline constexpr double kDefaultRadius = 3.0;

/// Everything the II layer needs at run time.
struct IILayerState {
  std::vector<Monomial> monomials;
  ShiftStats shift;
  RotationGroupSampling sampling = RotationGroupSampling::uniform(8);
  double r_max = kDefaultRadius;

  [[nodiscard]] std::size_t num_monomials() const { return monomials.size(); }

  void validate() const {
    if (monomials.empty()) throw ShapeError("II layer needs at least one monomial");
    if (sampling.angles.size() != static_cast<std::size_t>(sampling.num_angles) || sampling.num_angles < 1)
      throw ShapeError("II layer: inconsistent rotation sampling");
    for (const auto& m : monomials) {
      if (m.factors.empty()) throw ShapeError("II layer: monomial without factors");
      if (m.max_radius() > r_max + 1e-9)
        throw ShapeError("II layer: monomial offset beyond r_max " + std::to_string(r_max));
    }
  }
};

namespace detail {

/// Rotated factor offsets, indexed [monomial][angle][factor].
using OffsetTable = std::vector<std::vector<std::vector<SampleCoord>>>;

inline OffsetTable rotated_offsets(const IILayerState& state) {
  OffsetTable table(state.monomials.size());
  for (std::size_t m = 0; m < state.monomials.size(); ++m) {
    for (double phi : state.sampling.angles) {
      std::vector<SampleCoord> per_factor;
      for (const auto& f : state.monomials[m].factors) per_factor.push_back(rotate_offset(f.dv, f.du, phi));
      table[m].push_back(std::move(per_factor));
    }
  }
  return table;
}

inline void check_ii_input(const Tensor& features, const IILayerState& state) {
  if (features.rank() != 4) throw ShapeError("II layer expects batch x height x width x channels");
  if (features.dim(1) == 0 || features.dim(2) == 0) throw ShapeError("II layer on an empty map");
  if (features.dim(3) != state.shift.channels()) {
    throw ShapeError("II layer: input has " + std::to_string(features.dim(3)) + " channels, shift fitted on " +
                     std::to_string(state.shift.channels()));
  }
  state.validate();
  for (double v : features.data()) {
    if (!(v > 0.0)) throw PositivityError("II layer input not strictly positive; shift the features first");
  }
}

}  // namespace detail

/// Group average of every monomial over anchors (u, v) and the sampled angles,
/// per channel, normalized by 1 / (N_phi H W). Output: batch x channels x M.
///
/// Factor i of a monomial is sampled at anchor + R(phi) (d_v, d_u), with R the
/// same planar rotation used by rotate_maps.
inline Tensor ii_forward(const Tensor& features, const IILayerState& state) {
  detail::check_ii_input(features, state);
  const std::size_t nb = features.dim(0), h = features.dim(1), w = features.dim(2), ch = features.dim(3);
  const std::size_t nm = state.monomials.size(), na = state.sampling.angles.size();
  const auto offsets = detail::rotated_offsets(state);
  const double norm = 1.0 / static_cast<double>(na * h * w);
  Tensor out({nb, ch, nm});
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const PlaneView plane = channel_plane(features, n, c);
      for (std::size_t m = 0; m < nm; ++m) {
        const auto& factors = state.monomials[m].factors;
        double acc = 0.0;
        for (std::size_t k = 0; k < na; ++k) {
          const auto& offs = offsets[m][k];
          for (std::size_t v = 0; v < h; ++v) {
            for (std::size_t u = 0; u < w; ++u) {
              double term = 1.0;
              for (std::size_t i = 0; i < factors.size(); ++i) {
                const double s = bilinear_sample(
                    plane, {static_cast<double>(v) + offs[i].row, static_cast<double>(u) + offs[i].col});
                term *= std::pow(s, factors[i].b);
              }
              acc += term;
            }
          }
        }
        out[(n * ch + c) * nm + m] = acc * norm;
      }
    }
  }
  return out;
}

struct IIGradients {
  Tensor features;                              // same shape as the layer input
  std::vector<std::vector<double>> exponents;  // [monomial][factor]
};

/// Reverse pass of ii_forward for an upstream gradient of shape batch x channels x M.
inline IIGradients ii_backward(const Tensor& features, const IILayerState& state, const Tensor& upstream) {
  detail::check_ii_input(features, state);
  const std::size_t nb = features.dim(0), h = features.dim(1), w = features.dim(2), ch = features.dim(3);
  const std::size_t nm = state.monomials.size(), na = state.sampling.angles.size();
  if (upstream.shape() != Shape{nb, ch, nm})
    throw ShapeError("ii_backward: upstream shape " + shape_string(upstream.shape()));
  const auto offsets = detail::rotated_offsets(state);
  const double norm = 1.0 / static_cast<double>(na * h * w);

  IIGradients grads{Tensor(features.shape()), {}};
  for (const auto& m : state.monomials) grads.exponents.emplace_back(m.factors.size(), 0.0);

  std::vector<std::array<BilinearTap, 4>> taps;
  std::vector<double> samples;
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const PlaneView plane = channel_plane(features, n, c);
      double* gplane = grads.features.raw() + n * h * w * ch + c;
      for (std::size_t m = 0; m < nm; ++m) {
        const double g = upstream[(n * ch + c) * nm + m] * norm;
        if (g == 0.0) continue;
        const auto& factors = state.monomials[m].factors;
        const std::size_t nf = factors.size();
        taps.resize(nf);
        samples.resize(nf);
        auto& gexp = grads.exponents[m];
        for (std::size_t k = 0; k < na; ++k) {
          const auto& offs = offsets[m][k];
          for (std::size_t v = 0; v < h; ++v) {
            for (std::size_t u = 0; u < w; ++u) {
              double term = 1.0;
              for (std::size_t i = 0; i < nf; ++i) {
                taps[i] = bilinear_taps(h, w, {static_cast<double>(v) + offs[i].row,
                                               static_cast<double>(u) + offs[i].col});
                double s = 0.0;
                for (const auto& t : taps[i]) s += t.weight * plane(t.row, t.col);
                samples[i] = s;
                term *= std::pow(s, factors[i].b);
              }
              for (std::size_t i = 0; i < nf; ++i) {
                // b_i s_i^{b_i - 1} prod_{j != i} s_j^{b_j} == b_i term / s_i for s_i > 0
                const double dsample = g * factors[i].b * term / samples[i];
                for (const auto& t : taps[i]) gplane[plane.offset(t.row, t.col)] += dsample * t.weight;
                gexp[i] += g * std::log(samples[i]) * term;
              }
            }
          }
        }
      }
    }
  }
  return grads;
}

namespace detail {

inline double relative_change(const Tensor& moved, const Tensor& reference) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    num += (moved[i] - reference[i]) * (moved[i] - reference[i]);
    den += reference[i] * reference[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace detail

/// ||ii(rot_theta x) - ii(x)|| / ||ii(x)|| for each test angle (radians).
inline std::vector<double> ii_invariance_error(const Tensor& features, const IILayerState& state,
                                               std::span<const double> test_angles) {
  const Tensor reference = ii_forward(features, state);
  std::vector<double> errors;
  for (double theta : test_angles)
    errors.push_back(detail::relative_change(ii_forward(rotate_maps(features, theta), state), reference));
  return errors;
}

/// Global spatial max per (sample, channel): batch x channels.
inline Tensor spatial_max_pool(const Tensor& features) {
  if (features.rank() != 4) throw ShapeError("spatial_max_pool expects rank-4 features");
  const std::size_t nb = features.dim(0), hw = features.dim(1) * features.dim(2), ch = features.dim(3);
  Tensor out({nb, ch}, -std::numeric_limits<double>::infinity());
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < ch; ++c)
        out[n * ch + c] = std::max(out[n * ch + c], features[(n * hw + p) * ch + c]);
  return out;
}

/// Same metric as ii_invariance_error, for the spatial-max-pooled feature vector.
inline std::vector<double> maxpool_invariance_error(const Tensor& features, std::span<const double> test_angles) {
  const Tensor reference = spatial_max_pool(features);
  std::vector<double> errors;
  for (double theta : test_angles)
    errors.push_back(detail::relative_change(spatial_max_pool(rotate_maps(features, theta)), reference));
  return errors;
}

inline nlohmann::json ii_state_to_json(const IILayerState& state) {
  return {{"monomials", monomials_to_json(state.monomials)},
          {"epsilon", state.shift.epsilon},
          {"x_min", state.shift.x_min},
          {"num_angles", state.sampling.num_angles},
          {"r_max", state.r_max}};
}

inline IILayerState ii_state_from_json(const nlohmann::json& j) {
  for (const char* key : {"monomials", "epsilon", "x_min", "num_angles"})
    if (!j.contains(key)) throw FormatError(std::string("II state JSON missing \"") + key + "\"");
  IILayerState state;
  state.monomials = monomials_from_json(j["monomials"]);
  state.shift.epsilon = j["epsilon"].get<double>();
  state.shift.x_min = j["x_min"].get<std::vector<double>>();
  state.sampling = RotationGroupSampling::uniform(j["num_angles"].get<int>());
  if (j.contains("r_max")) state.r_max = j["r_max"].get<double>();
  state.validate();
  return state;
}

}  // namespace iil
