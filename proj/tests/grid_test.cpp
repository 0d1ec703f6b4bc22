#include "pintgru/grid.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace pintgru;

namespace {

Sequence ramp_sequence(std::size_t steps, std::size_t dim) {
  Sequence s(steps, dim);
  for (std::size_t t = 0; t <= steps; ++t)
    for (std::size_t i = 0; i < dim; ++i) s[t][i] = double(t) + 0.1 * double(i);
  return s;
}

}  // namespace

TEST(SeqNorm, KnownValues) {
  Sequence z(5, 3);
  EXPECT_DOUBLE_EQ(seq_l2_norm(z), 0.0);
  Sequence s(2, 1);
  s[0][0] = 99.0;  // anchor excluded from the norm
  s[1][0] = 3.0;
  s[2][0] = 4.0;
  EXPECT_DOUBLE_EQ(seq_l2_norm(s), 5.0);
  Sequence u(1, 2);
  u[1][0] = 1.0;
  u[1][1] = 1.0;
  EXPECT_NEAR(seq_l2_norm(u), std::sqrt(2.0), 1e-15);
}

TEST(SeqNorm, TriangleInequality) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Sequence a = testsup::random_sequence(8, 3, rng);
    Sequence b = testsup::random_sequence(8, 3, rng);
    Sequence sum(8, 3);
    for (std::size_t t = 0; t <= 8; ++t)
      for (std::size_t i = 0; i < 3; ++i) sum[t][i] = a[t][i] + b[t][i];
    EXPECT_LE(seq_l2_norm(sum), seq_l2_norm(a) + seq_l2_norm(b) + 1e-12);
  }
}

TEST(Restrict, KeepsEveryCfThEntry) {
  Sequence s = ramp_sequence(8, 2);
  Sequence c = restrict_seq(s, 4);
  ASSERT_EQ(c.steps(), 2u);
  for (std::size_t t = 0; t <= 2; ++t)
    for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(c[t][i], s[4 * t][i]);
}

TEST(Restrict, IdentityAtCfOne) {
  Sequence s = ramp_sequence(6, 2);
  Sequence c = restrict_seq(s, 1);
  EXPECT_EQ(testsup::max_abs_diff(s, c), 0.0);
}

TEST(Restrict, ConstantStaysConstant) {
  Sequence s(12, 3);
  s.fill(7.5);
  Sequence c = restrict_seq(s, 4);
  for (std::size_t t = 0; t <= c.steps(); ++t)
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(c[t][i], 7.5);
}

TEST(Restrict, RejectsNonDivisibleLength) {
  Sequence s = ramp_sequence(10, 1);
  EXPECT_THROW(restrict_seq(s, 4), std::invalid_argument);
}

TEST(Prolong, PiecewiseConstantFill) {
  Sequence coarse(2, 1);
  coarse[0][0] = 10.0;
  coarse[1][0] = 20.0;
  coarse[2][0] = 30.0;
  Sequence fine = prolong_seq(coarse, 4, 8);
  // Indices 1..3 take the anchor value, 4..7 the first coarse point, 8 the second.
  for (std::size_t t = 0; t <= 3; ++t) EXPECT_DOUBLE_EQ(fine[t][0], 10.0);
  for (std::size_t t = 4; t <= 7; ++t) EXPECT_DOUBLE_EQ(fine[t][0], 20.0);
  EXPECT_DOUBLE_EQ(fine[8][0], 30.0);
}

TEST(Prolong, RestrictionIsLeftInverse) {
  Rng rng(9);
  Sequence coarse = testsup::random_sequence(4, 3, rng, 1.0, false);
  Sequence fine = prolong_seq(coarse, 4, 16);
  Sequence back = restrict_seq(fine, 4);
  EXPECT_EQ(testsup::max_abs_diff(coarse, back), 0.0);
}

TEST(Prolong, MismatchedLengthRejected) {
  Sequence coarse(2, 1);
  EXPECT_THROW(prolong_seq(coarse, 4, 9), std::invalid_argument);
}

TEST(Hierarchy, StandardDepths) {
  Hierarchy h = build_hierarchy(128, 4, 3);
  ASSERT_EQ(h.depth(), 3u);
  EXPECT_EQ(h.levels[0].steps, 128u);
  EXPECT_EQ(h.levels[1].steps, 32u);
  EXPECT_EQ(h.levels[2].steps, 8u);
  EXPECT_DOUBLE_EQ(h.levels[0].gamma, 1.0);
  EXPECT_DOUBLE_EQ(h.levels[1].gamma, 4.0);
  EXPECT_DOUBLE_EQ(h.levels[2].gamma, 16.0);

  Hierarchy h2 = build_hierarchy(128, 2, 6);
  ASSERT_EQ(h2.depth(), 6u);
  EXPECT_EQ(h2.levels.back().steps, 4u);

  Hierarchy h8 = build_hierarchy(128, 8, 8);
  ASSERT_EQ(h8.depth(), 2u);  // 16 -> 2 would fall below the 4-step floor
  EXPECT_EQ(h8.levels[1].steps, 16u);
}

TEST(Hierarchy, StopsWhenCoarseningWouldGoBelowFourSteps) {
  Hierarchy h = build_hierarchy(16, 8, 4);
  EXPECT_EQ(h.depth(), 1u);  // 16/8 = 2 < 4
}

TEST(Hierarchy, RejectsBadArguments) {
  EXPECT_THROW(build_hierarchy(3, 4, 2), std::invalid_argument);
  EXPECT_THROW(build_hierarchy(16, 1, 2), std::invalid_argument);
  EXPECT_THROW(build_hierarchy(16, 4, 0), std::invalid_argument);
}

TEST(Hierarchy, PaddingRoundsUpToCoarsestUnit) {
  EXPECT_EQ(padded_steps(128, 4, 3), 128u);
  EXPECT_EQ(padded_steps(100, 4, 3), 112u);
  EXPECT_EQ(padded_steps(5, 4, 1), 5u);
  EXPECT_EQ(padded_steps(1, 2, 6), 32u);
}

TEST(Residual, ExactTrajectoryHasZeroResidual) {
  // Step map: h_t = 0.5 h_{t-1} + t (scalar), exact trajectory by recursion.
  auto step = [](std::size_t t, std::span<const double> h_prev) {
    DenseVector out(1);
    out[0] = 0.5 * h_prev[0] + double(t);
    return out;
  };
  Sequence h(6, 1);
  for (std::size_t t = 1; t <= 6; ++t) h[t][0] = 0.5 * h[t - 1][0] + double(t);
  Sequence r = propagation_residual([&](std::size_t t, const DenseVector& hp) {
    return step(t, hp.span());
  }, h);
  EXPECT_LE(seq_l2_norm(r), 1e-13);
}

TEST(Residual, LocalPerturbationTouchesTwoEntries) {
  auto step = [](std::size_t, const DenseVector& hp) {
    DenseVector out(1);
    out[0] = 0.5 * hp[0] + 1.0;
    return out;
  };
  Sequence h(8, 1);
  for (std::size_t t = 1; t <= 8; ++t) h[t][0] = 0.5 * h[t - 1][0] + 1.0;
  h[3][0] += 1.0;
  Sequence r = propagation_residual(step, h);
  EXPECT_NEAR(r[3][0], 1.0, 1e-13);
  EXPECT_NEAR(r[4][0], -0.5, 1e-13);
  for (std::size_t t : {1u, 2u, 5u, 6u, 7u, 8u}) EXPECT_NEAR(r[t][0], 0.0, 1e-13);
}
