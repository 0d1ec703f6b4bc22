#include "pintgru/numerics.hpp"

#include <cmath>
#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace pintgru;

TEST(Affine, IdentityPlusZeroBias) {
  DenseMatrix w = DenseMatrix::identity(3);
  DenseVector x{1.0, -2.0, 3.0};
  DenseVector b(3);
  DenseVector y = affine(w, x, b);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Affine, ZeroMatrixGivesBias) {
  DenseMatrix w(2, 3);
  DenseVector x{1.0, 2.0, 3.0};
  DenseVector b{4.0, -5.0};
  DenseVector y = affine(w, x, b);
  EXPECT_DOUBLE_EQ(y[0], 4.0);
  EXPECT_DOUBLE_EQ(y[1], -5.0);
}

TEST(Affine, HandWorkedExample) {
  DenseMatrix w(2, 2);
  w(0, 0) = 1.0;
  w(0, 1) = 2.0;
  w(1, 0) = 0.0;
  w(1, 1) = 1.0;
  DenseVector x{1.0, 1.0};
  DenseVector b{0.0, 1.0};
  DenseVector y = affine(w, x, b);
  EXPECT_DOUBLE_EQ(y[0], 3.0);
  EXPECT_DOUBLE_EQ(y[1], 2.0);
}

TEST(Affine, ShapeMismatchThrows) {
  DenseMatrix w(2, 3);
  DenseVector x{1.0, 2.0};  // wrong length
  DenseVector b{0.0, 0.0};
  EXPECT_THROW(affine(w, x, b), ShapeError);
  DenseVector x3{1.0, 2.0, 3.0};
  DenseVector b1{0.0};
  EXPECT_THROW(affine(w, x3, b1), ShapeError);
}

TEST(Sigmoid, KnownValues) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(20.0), 1.0, 1e-8);
  EXPECT_NEAR(sigmoid(std::log(3.0)), 0.75, 1e-15);
}

TEST(Sigmoid, MonotoneAndComplementary) {
  Rng rng(7);
  double prev = sigmoid(-30.0);
  for (double a = -29.5; a <= 30.0; a += 0.5) {
    const double s = sigmoid(a);
    EXPECT_GT(s, prev);
    prev = s;
  }
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-40.0, 40.0);
    EXPECT_NEAR(sigmoid(a) + sigmoid(-a), 1.0, 1e-12);
  }
}

TEST(Tanh, KnownValuesAndBounds) {
  DenseVector v{0.0, 0.5 * std::log(3.0), -0.5 * std::log(3.0)};
  DenseVector y = tanh_act(v);
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 0.5, 1e-15);
  EXPECT_NEAR(y[2], -0.5, 1e-15);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-50.0, 50.0);
    const double t = std::tanh(x);
    EXPECT_LT(t * t, 1.0 + 1e-15);
    EXPECT_NEAR(std::tanh(-x), -t, 1e-12);
  }
}

TEST(Dft, ConstantSignal) {
  const std::size_t n = 16;
  std::vector<double> sig(n, 2.5);
  auto mags = dft_magnitudes(sig);
  ASSERT_EQ(mags.size(), n / 2 + 1);
  EXPECT_NEAR(mags[0], 2.5 * n, 1e-9);
  for (std::size_t k = 1; k < mags.size(); ++k) EXPECT_NEAR(mags[k], 0.0, 1e-9);
}

TEST(Dft, UnitImpulse) {
  std::vector<double> sig(32, 0.0);
  sig[0] = 1.0;
  auto mags = dft_magnitudes(sig);
  for (double m : mags) EXPECT_NEAR(m, 1.0, 1e-12);
}

TEST(Dft, SingleCosineBin) {
  const std::size_t n = 64;
  std::vector<double> sig(n);
  for (std::size_t t = 0; t < n; ++t)
    sig[t] = std::cos(2.0 * M_PI * 4.0 * static_cast<double>(t) / static_cast<double>(n));
  auto mags = dft_magnitudes(sig);
  EXPECT_NEAR(mags[4], n / 2.0, 1e-9);
  for (std::size_t k = 0; k < mags.size(); ++k) {
    if (k != 4) {
      EXPECT_LT(mags[k], 1e-9);
    }
  }
}

// Direct O(N^2) summation oracle; the implementation uses an FFT for
// power-of-two lengths, so this is a genuinely independent route.
static std::vector<double> dft_oracle(const std::vector<double>& sig) {
  const std::size_t n = sig.size();
  std::vector<double> mags(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * M_PI * double(k) * double(t) / double(n);
      re += sig[t] * std::cos(ang);
      im += sig[t] * std::sin(ang);
    }
    mags[k] = std::hypot(re, im);
  }
  return mags;
}

TEST(Dft, MatchesDirectSummationOracle) {
  Rng rng(11);
  for (std::size_t n : {8u, 37u, 64u, 256u}) {
    std::vector<double> sig(n);
    for (double& x : sig) x = rng.uniform(-1.0, 1.0);
    auto got = dft_magnitudes(sig);
    auto want = dft_oracle(sig);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < got.size(); ++k)
      EXPECT_LT(testsup::rel_err(got[k], want[k], 1e-6), 1e-9) << "n=" << n << " k=" << k;
  }
}

TEST(Dft, EmptySignalRejected) {
  EXPECT_THROW(dft_magnitudes({}), std::invalid_argument);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform();
    EXPECT_DOUBLE_EQ(x, b.uniform());
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
  Rng c(1);
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += c.normal();
  mean /= n;
  EXPECT_NEAR(mean, 0.0, 0.05);
}

TEST(OrderedSum, FoldsLeftToRight) {
  std::vector<double> parts{1e16, 1.0, -1e16};
  // Left-to-right: (1e16 + 1) loses the 1, so the fold is exactly 0.
  EXPECT_DOUBLE_EQ(ordered_sum({parts.data(), parts.size()}), 0.0);
}
