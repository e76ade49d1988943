#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "iil/ii_layer.hpp"
#include "oracles.hpp"

using namespace iil;

namespace {

constexpr double kPi = std::numbers::pi;

Tensor positive_maps(std::size_t n, std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng,
                     double lo = 0.5, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t({n, h, w, c});
  for (double& v : t.data()) v = u(rng);
  return t;
}

IILayerState make_state(std::vector<Monomial> monomials, std::size_t channels, int angles, double r_max = 3.0) {
  IILayerState s;
  s.monomials = std::move(monomials);
  s.shift = ShiftStats{std::vector<double>(channels, 0.0), 1e-3};
  s.sampling = RotationGroupSampling::uniform(angles);
  s.r_max = r_max;
  return s;
}

Monomial random_integer_monomial(std::mt19937_64& rng, int max_offset) {
  std::uniform_int_distribution<int> off(-max_offset, max_offset), k(1, 3);
  std::uniform_real_distribution<double> b(0.0, 2.0);
  Monomial m;
  const int nf = k(rng);
  for (int i = 0; i < nf; ++i)
    m.factors.push_back({static_cast<double>(off(rng)), static_cast<double>(off(rng)), b(rng)});
  return m;
}

}  // namespace

TEST(RotationSampling, UniformAnglesAreIncreasingInFullTurn) {
  const auto s = RotationGroupSampling::uniform(8);
  ASSERT_EQ(s.angles.size(), 8u);
  EXPECT_EQ(s.angles[0], 0.0);
  for (std::size_t k = 1; k < 8; ++k) EXPECT_GT(s.angles[k], s.angles[k - 1]);
  EXPECT_LT(s.angles.back(), 2 * kPi);
  EXPECT_NEAR(s.angles[2], kPi / 2, 1e-15);
  EXPECT_THROW(RotationGroupSampling::uniform(0), ShapeError);
}

TEST(IIForward, ConstantMapGivesPowerOfExponentSum) {
  Tensor x({1, 5, 5, 1}, 1.7);
  const auto state = make_state({{{{1.0, 2.0, 1.5}, {-2.5, 0.3, 0.75}}}}, 1, 8);
  const Tensor out = ii_forward(x, state);
  EXPECT_NEAR(out[0], std::pow(1.7, 2.25), 1e-13);
}

TEST(IIForward, MatchesQuarterTurnOracleOnGridOffsets) {
  std::mt19937_64 rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + trial % 3;
    const Tensor x = positive_maps(1, n, n, 1, rng);
    Monomial m = random_integer_monomial(rng, 2);
    const auto state = make_state({m}, 1, 4);
    std::vector<oracle::IntFactor> factors;
    for (const auto& f : m.factors) factors.push_back({static_cast<int>(f.dv), static_cast<int>(f.du), f.b});
    const double expect = oracle::ii_quarter_turns(x.values(), n, n, factors);
    worst = std::max(worst, std::abs(ii_forward(x, state)[0] - expect) / std::abs(expect));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(IIForward, RadiallySymmetricMapIsAngleIndependent) {
  // The map depends only on distance to the center, so each quarter turn of the
  // offset just permutes the anchors and every angle contributes the same sum.
  const std::size_t n = 9;
  Tensor x({1, n, n, 1});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) x.at(0, r, c, 0) = 1.0 + std::hypot(r - 4.0, c - 4.0);
  const Monomial m{{{2.0, 0.0, 1.0}}};
  const Tensor multi = ii_forward(x, make_state({m}, 1, 4));
  const Tensor single = ii_forward(x, make_state({m}, 1, 1));
  EXPECT_NEAR(multi[0], single[0], 1e-12);
}

TEST(IIForward, RejectsNonPositiveAndMismatchedInput) {
  const auto state = make_state({{{{0.0, 0.0, 1.0}}}}, 2, 4);
  Tensor x({1, 3, 3, 2}, 1.0);
  x[4] = 0.0;
  EXPECT_THROW(ii_forward(x, state), PositivityError);
  EXPECT_THROW(ii_forward(Tensor({1, 3, 3, 3}, 1.0), state), ShapeError);
  EXPECT_THROW(ii_forward(Tensor({3, 3, 2}, 1.0), state), ShapeError);
}

TEST(IIForward, RejectsOffsetsBeyondRadius) {
  const auto state = make_state({{{{3.0, 3.0, 1.0}}}}, 1, 4, 3.0);
  EXPECT_THROW(ii_forward(Tensor({1, 3, 3, 1}, 1.0), state), ShapeError);
  EXPECT_THROW(make_state({}, 1, 4).validate(), ShapeError);
}

TEST(IIForward, BatchPermutationPermutesOutputs) {
  std::mt19937_64 rng(3);
  const Tensor x = positive_maps(3, 5, 5, 2, rng);
  const auto state = make_state({{{{1.0, 0.5, 1.0}, {-1.0, 0.0, 2.0}}}, {{{0.0, 1.5, 1.0}}}}, 2, 8);
  const Tensor out = ii_forward(x, state);
  Tensor swapped(x.shape());
  const std::size_t per = 5 * 5 * 2;
  const std::size_t order[3] = {2, 0, 1};
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < per; ++i) swapped[n * per + i] = x[order[n] * per + i];
  const Tensor out2 = ii_forward(swapped, state);
  const std::size_t per_out = 2 * 2;
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < per_out; ++i) EXPECT_EQ(out2[n * per_out + i], out[order[n] * per_out + i]);
}

TEST(IIForward, ChannelsAreIndependent) {
  std::mt19937_64 rng(4);
  Tensor x = positive_maps(1, 6, 6, 3, rng);
  const auto state = make_state({{{{1.0, -1.0, 1.0}, {0.0, 2.0, 1.0}}}}, 3, 8);
  const Tensor out = ii_forward(x, state);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (i % 3 != 1) x[i] = 1e-3;
  const Tensor out2 = ii_forward(x, state);
  EXPECT_EQ(out2[1], out[1]);
}

TEST(IIForward, WholePixelTranslationOfInteriorPatternIsInvisible) {
  std::mt19937_64 rng(5);
  const std::size_t n = 15;
  Tensor x({1, n, n, 1}, 1.0);
  std::uniform_real_distribution<double> u(1.0, 3.0);
  for (std::size_t r = 5; r < 8; ++r)
    for (std::size_t c = 5; c < 8; ++c) x.at(0, r, c, 0) = u(rng);
  Tensor moved({1, n, n, 1});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) moved.at(0, (r + 2) % n, (c + n - 1) % n, 0) = x.at(0, r, c, 0);
  const auto state = make_state({{{{2.5, 1.0, 1.0}, {-0.7, -1.2, 2.0}}}}, 1, 8);
  const double a = ii_forward(x, state)[0], b = ii_forward(moved, state)[0];
  EXPECT_LT(std::abs(a - b) / a, 1e-9);
}

TEST(IIInvariance, ZeroAngleHasZeroError) {
  std::mt19937_64 rng(6);
  const Tensor x = positive_maps(2, 7, 7, 2, rng);
  const auto state = make_state({{{{1.0, 1.0, 1.0}}}}, 2, 8);
  const std::vector<double> angles{0.0};
  EXPECT_EQ(ii_invariance_error(x, state, angles)[0], 0.0);
}

TEST(IIInvariance, QuarterTurnIsExactForInteriorSamples) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = positive_maps(1, 11, 11, 2, rng);
    std::uniform_real_distribution<double> off(-1.4, 1.4), b(0.2, 2.0);
    std::vector<Monomial> ms;
    for (int m = 0; m < 3; ++m) ms.push_back({{{off(rng), off(rng), b(rng)}, {off(rng), off(rng), b(rng)}}});
    const auto state = make_state(ms, 2, 8, 2.0);
    const std::vector<double> angles{kPi / 2, kPi, 3 * kPi / 2};
    for (double e : ii_invariance_error(x, state, angles)) EXPECT_LE(e, 1e-9);
  }
}

TEST(IIInvariance, FortyFiveDegreesBeatsSpatialMaxPooling) {
  std::mt19937_64 rng(8);
  const std::vector<double> angles{kPi / 4};
  double ii_total = 0.0, max_total = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = positive_maps(1, 15, 15, 1, rng);
    const auto state = make_state({{{{1.0, 0.0, 1.0}, {0.0, 1.0, 1.0}}}, {{{2.0, 1.0, 2.0}}}}, 1, 8);
    ii_total += ii_invariance_error(x, state, angles)[0];
    max_total += maxpool_invariance_error(x, angles)[0];
  }
  EXPECT_LT(ii_total / 20, max_total / 20);
}

TEST(IIBackward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(9);
  const Tensor x = positive_maps(2, 4, 4, 1, rng);
  const auto state = make_state({{{{1.0, 0.5, 1.0}}}}, 1, 4);
  const auto g = ii_backward(x, state, Tensor({2, 1, 1}));
  for (double v : g.features.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.exponents[0][0], 0.0);
}

TEST(IIBackward, SinglePixelReducesToMonomialGradients) {
  Tensor x({1, 1, 1, 1}, 2.5);
  const auto state = make_state({{{{0.0, 0.0, 1.75}}}}, 1, 4);
  const auto g = ii_backward(x, state, Tensor({1, 1, 1}, 1.0));
  const std::vector<double> v{2.5}, b{1.75};
  EXPECT_NEAR(g.features[0], grad_values(v, b, 0), 1e-13);
  EXPECT_NEAR(g.exponents[0][0], grad_exponents(v, b, 0), 1e-13);
}

TEST(IIBackward, UpstreamShapeIsChecked) {
  const auto state = make_state({{{{0.0, 0.0, 1.0}}}}, 1, 4);
  EXPECT_THROW(ii_backward(Tensor({1, 3, 3, 1}, 1.0), state, Tensor({1, 1, 2})), ShapeError);
}

TEST(IIBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const Tensor x = positive_maps(1, 5, 5, 1, rng);
  auto state = make_state({{{{1.3, -0.4, 1.2}, {-0.6, 1.1, 0.8}}}, {{{0.7, 2.1, 1.5}}}}, 1, 4);
  const Tensor w({1, 1, 2}, std::vector<double>{0.8, -1.3});
  const auto loss = [&](const Tensor& in, const IILayerState& s) {
    const Tensor out = ii_forward(in, s);
    return w[0] * out[0] + w[1] * out[1];
  };
  const auto g = ii_backward(x, state, w);

  const auto fd_x = oracle::finite_difference(
      [&](const std::vector<double>& p) { return loss(Tensor(x.shape(), p), state); }, x.values());
  EXPECT_LT(oracle::max_rel_diff(g.features.values(), fd_x), 1e-5);

  std::vector<double> b0{1.2, 0.8, 1.5}, an{g.exponents[0][0], g.exponents[0][1], g.exponents[1][0]};
  const auto fd_b = oracle::finite_difference(
      [&](const std::vector<double>& p) {
        auto s = state;
        s.monomials[0].factors[0].b = p[0];
        s.monomials[0].factors[1].b = p[1];
        s.monomials[1].factors[0].b = p[2];
        return loss(x, s);
      },
      b0);
  EXPECT_LT(oracle::max_rel_diff(an, fd_b), 1e-5);
}

TEST(IIBackward, DirectionalDerivativesAgree) {
  std::mt19937_64 rng(11);
  const Tensor x = positive_maps(2, 6, 6, 2, rng, 1.0, 3.0);
  const auto state = make_state({{{{1.0, 1.0, 1.0}, {-2.0, 0.5, 1.0}}}, {{{0.0, -1.5, 2.0}}}}, 2, 8);
  Tensor up({2, 2, 2});
  std::normal_distribution<double> nd(0, 1);
  for (double& v : up.data()) v = nd(rng);
  const auto g = ii_backward(x, state, up);
  const auto f = [&](const Tensor& in) {
    const Tensor out = ii_forward(in, state);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += up[i] * out[i];
    return acc;
  };
  const double h = 1e-5;
  for (int dir = 0; dir < 20; ++dir) {
    Tensor d(x.shape());
    for (double& v : d.data()) v = nd(rng);
    double analytic = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) analytic += g.features[i] * d[i];
    const double numeric = (f(add(x, scale(d, h))) - f(add(x, scale(d, -h)))) / (2 * h);
    EXPECT_LT(std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12}), 1e-5);
  }
}

TEST(IIJson, StateRoundTrip) {
  auto state = make_state({{{{1.0, 0.5, 1.0}, {0.0, -2.0, 2.0}}}}, 3, 8);
  state.shift.x_min = {-1.5, 0.25, 3.0};
  state.shift.epsilon = 2e-3;
  const IILayerState back = ii_state_from_json(nlohmann::json::parse(ii_state_to_json(state).dump()));
  EXPECT_EQ(back.monomials, state.monomials);
  EXPECT_EQ(back.shift.x_min, state.shift.x_min);
  EXPECT_EQ(back.shift.epsilon, 2e-3);
  EXPECT_EQ(back.sampling.num_angles, 8);
  EXPECT_EQ(back.sampling.angles, state.sampling.angles);
  EXPECT_EQ(back.r_max, 3.0);
}

TEST(IIJson, MissingFieldIsFormatError) {
  auto j = ii_state_to_json(make_state({{{{1.0, 0.5, 1.0}}}}, 1, 8));
  j.erase("x_min");
  EXPECT_THROW(ii_state_from_json(j), FormatError);
}
