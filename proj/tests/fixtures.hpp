#pragma once

// Shared test data that needs the library types.

#include <random>
#include <vector>

#include "iil/monomial.hpp"
#include "iil/tensor.hpp"

namespace fixture {

using iil::Monomial;
using iil::Tensor;

// Two-class maps with identical value histograms: class 0 is a checkerboard of
// 1s and 2s, class 1 vertical stripes of the same values, plus small noise.
// Only a product of two neighbouring pixels tells them apart.
struct Planted {
  Tensor maps;
  std::vector<int> labels;
};

inline Planted planted_maps(std::size_t count, std::mt19937_64& rng) {
  const std::size_t n = 8;
  Planted p{Tensor({count, n, n, 1}), {}};
  std::uniform_real_distribution<double> noise(-0.05, 0.05);
  for (std::size_t s = 0; s < count; ++s) {
    const int label = static_cast<int>(s % 2);
    p.labels.push_back(label);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const bool high = label == 0 ? (r + c) % 2 == 0 : c % 2 == 0;
        p.maps.at(s, r, c, 0) = (high ? 2.0 : 1.0) + noise(rng);
      }
  }
  return p;
}

inline std::vector<Monomial> planted_pool() {
  return {
      {{{0.0, 0.0, 1.0}}},                   // mean
      {{{0.0, 0.0, 2.0}}},                   // mean of squares
      {{{2.0, 0.0, 1.0}, {0.0, 0.0, 1.0}}},  // distance-2 product: same colour in both classes
      {{{1.0, 0.0, 1.0}, {0.0, 0.0, 1.0}}},  // neighbour product: the planted one
      {{{0.0, 0.0, 1.0}, {0.0, 0.0, 3.0}}},
  };
}

}  // namespace fixture
