#include <gtest/gtest.h>

#include <random>

#include "iil/tensor.hpp"
#include "oracles.hpp"

using namespace iil;

TEST(Tensor, ConstructsZeroFilledWithShape) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.size(), 24u);
  for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, RejectsRankAboveFive) { EXPECT_THROW(Tensor({1, 1, 1, 1, 1, 1}), ShapeError); }

TEST(Tensor, RejectsDataLengthMismatch) { EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError); }

TEST(Tensor, AtIsRowMajorAndBoundsChecked) {
  Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_EQ(t.at(0, 1), 2.0);
  EXPECT_THROW(t.at(2, 0), ShapeError);
  EXPECT_THROW(t.at(0), ShapeError);
}

TEST(Tensor, ReshapeKeepsDataAndChecksCount) {
  Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  const Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.at(2, 1), 6.0);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, ElementwiseOpsRequireEqualShapes) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  EXPECT_EQ(add(a, b).at(1, 1), 12.0);
  EXPECT_EQ(mul(a, b).at(0, 1), 12.0);
  EXPECT_EQ(scale(a, -2).at(1, 0), -6.0);
  EXPECT_THROW(add(a, Tensor({2, 3})), ShapeError);
}

TEST(Tensor, SumAxesMatchesManualLoops) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t({2, 3, 4});
  for (double& v : t.data()) v = u(rng);
  const Tensor s = sum_axes(t, {0, 2});
  ASSERT_EQ(s.shape(), (Shape{3}));
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = 0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 4; ++k) acc += t.at(i, j, k);
    EXPECT_NEAR(s[j], acc, 1e-14);
  }
}

TEST(Tensor, MaxAxisRecordsArgmaxWithLowestTie) {
  const Tensor t = Tensor::matrix({{1, 5, 5}, {7, 2, 7}});
  const MaxResult r = max_axis(t, 1);
  EXPECT_EQ(r.values[0], 5.0);
  EXPECT_EQ(r.argmax[0], 1u);
  EXPECT_EQ(r.values[1], 7.0);
  EXPECT_EQ(r.argmax[1], 0u);
}

TEST(Tensor, MatmulAgreesWithTripleLoop) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor a({4, 5}), b({5, 3});
  for (double& v : a.data()) v = u(rng);
  for (double& v : b.data()) v = u(rng);
  const auto expect = oracle::matmul(a.values(), b.values(), 4, 5, 3);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(c[i], expect[i], 1e-14);
}

TEST(Tensor, MatmulRejectsInnerMismatch) { EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError); }

TEST(Tensor, IdentityIsNeutralForMatmul) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_EQ(matmul(a, identity(2)).values(), a.values());
}
