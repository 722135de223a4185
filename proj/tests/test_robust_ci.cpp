#include <gtest/gtest.h>

#include <cmath>

#include "momentguard/error.hpp"
#include "momentguard/oracle.hpp"
#include "momentguard/robust_ci.hpp"
#include "test_support.hpp"

using namespace momentguard;
using mgtest::max_rel_diff;

namespace {

MomentModel scalar_model() {
  MomentModel m;
  m.gamma = Matrix::Constant(1, 1, -1.0);
  m.sigma = Matrix::Constant(1, 1, 1.0);
  m.h_deriv = RowVector::Constant(1, 1.0);
  m.g_init = Vector::Constant(1, 0.1);
  m.h_init = 0.5;
  m.n = 100;
  return m;
}

MisspecSet scalar_set(double mm) { return MisspecSet{Matrix::Constant(1, 1, 1.0), Norm::L2, mm}; }

Sensitivity implied_sensitivity(const MomentModel& m, const Matrix& w) {
  return gmm_sensitivity(m, w);
}

}  // namespace

TEST(OneStep, TrivialCases) {
  mgtest::Rng rng(40);
  MomentModel m = mgtest::random_model(rng, 4, 2);
  EXPECT_EQ(robust_ci::one_step(m, Sensitivity{Vector::Zero(4)}), m.h_init);
  m.g_init.setZero();
  EXPECT_EQ(robust_ci::one_step(m, efficient_sensitivity(m)), m.h_init);
  EXPECT_THROW(robust_ci::one_step(m, Sensitivity{Vector::Zero(3)}), Error);
}

TEST(TwoSidedCi, ScalarExample) {
  const MomentModel m = scalar_model();
  const MisspecSet set = scalar_set(1.0);
  const auto f = sensitivity::frontier(m, set);
  const RobustCI ci = robust_ci::two_sided_ci(m, set, f, Alpha(0.05));
  EXPECT_NEAR(ci.estimate, 0.6, 1e-14);
  EXPECT_NEAR(ci.std_error, 0.1, 1e-14);
  EXPECT_NEAR(ci.max_bias, 0.1, 1e-14);
  EXPECT_NEAR(ci.half_length, oracle::cv_alpha_oracle(1.0, Alpha(0.05)) / 10.0, 1e-12);
  EXPECT_NEAR(ci.lower, 0.6 - ci.half_length, 1e-14);
  EXPECT_NEAR(ci.upper, 0.6 + ci.half_length, 1e-14);
  EXPECT_EQ(ci.side, CiSide::TwoSided);
}

TEST(TwoSidedCi, WaldAtZeroM) {
  mgtest::Rng rng(41);
  for (Norm p : {Norm::L2, Norm::Linf}) {
    const MomentModel m = mgtest::random_model(rng, 5, 2);
    const MisspecSet set{rng.matrix(5, 2), p, 0.0};
    const RobustCI ci = robust_ci::two_sided_ci(m, set, sensitivity::frontier(m, set), Alpha(0.05));
    const Sensitivity k0 = efficient_sensitivity(m);
    const double se = std::sqrt(k0.k.dot(m.sigma * k0.k) / m.n);
    EXPECT_NEAR(ci.half_length, critval::norm_quantile(0.975) * se, 1e-12 * se);
    EXPECT_NEAR(ci.estimate, robust_ci::one_step(m, k0), 1e-12);
    EXPECT_EQ(ci.max_bias, 0.0);
  }
}

TEST(TwoSidedCi, HalfLengthBounds) {
  mgtest::Rng rng(42);
  const double z = critval::norm_quantile(0.975);
  for (int t = 0; t < 50; ++t) {
    const MomentModel m = mgtest::random_model(rng, 5, 1);
    const MisspecSet set{rng.matrix(5, 2), t % 2 ? Norm::L2 : Norm::Linf, rng.uniform(0.1, 4.0)};
    const RobustCI ci = robust_ci::two_sided_ci(m, set, sensitivity::frontier(m, set), Alpha(0.05));
    const double cv = critval::cv_alpha(ci.max_bias / ci.std_error, Alpha(0.05));
    EXPECT_NEAR(ci.half_length, cv * ci.std_error, 1e-12 * ci.half_length);
    EXPECT_GE(ci.half_length, z * ci.std_error * (1 - 1e-12));
    if (ci.max_bias > 0) EXPECT_LT(ci.half_length, ci.max_bias + z * ci.std_error);
  }
}

TEST(TwoSidedCi, MseCriterionUsesSquaredBias) {
  mgtest::Rng rng(43);
  const MomentModel m2 = mgtest::random_model(rng, 4, 1);
  const MisspecSet set{rng.matrix(4, 1), Norm::L2, 1.5};
  const auto f = sensitivity::frontier(m2, set);
  const RobustCI ci = robust_ci::two_sided_ci(m2, set, f, Alpha(0.05), Criterion::Mse);
  const double mse = std::pow(ci.max_bias, 2) + std::pow(ci.std_error, 2);
  for (const auto& kn : f.knots()) {
    EXPECT_LE(mse, (std::pow(1.5 * kn.bbar, 2) + kn.var) / m2.n * (1 + 1e-10));
  }
}

TEST(OneSidedCi, ScalarExample) {
  const MomentModel m = scalar_model();
  const RobustCI ci = robust_ci::one_sided_ci(m, scalar_set(1.0), Sensitivity{Vector::Ones(1)}, Alpha(0.05));
  EXPECT_NEAR(ci.lower, 0.6 - 0.1 - critval::norm_quantile(0.95) / 10.0, 1e-14);
  EXPECT_NEAR(ci.lower, 0.6 - 0.1 - 1.6449 / 10.0, 1e-5);
  EXPECT_TRUE(std::isinf(ci.upper) && ci.upper > 0);
  EXPECT_EQ(ci.side, CiSide::LowerOneSided);
}

TEST(OneSidedCi, WaldAtZeroMAndSignSymmetry) {
  mgtest::Rng rng(44);
  const MomentModel m = mgtest::random_model(rng, 4, 1);
  const Sensitivity k = efficient_sensitivity(m);
  const double se = std::sqrt(k.k.dot(m.sigma * k.k) / m.n);
  const MisspecSet set{rng.matrix(4, 2), Norm::Linf, 0.0};
  const RobustCI lo = robust_ci::one_sided_ci(m, set, k, Alpha(0.1));
  EXPECT_NEAR(lo.lower, robust_ci::one_step(m, k) - critval::norm_quantile(0.9) * se, 1e-12);

  // upper endpoint for h from the lower endpoint for -h
  const MisspecSet set2 = set.with_m(1.3);
  MomentModel neg = m;
  neg.h_deriv = -m.h_deriv;
  neg.h_init = -m.h_init;
  const Sensitivity kneg{-k.k};
  const RobustCI a = robust_ci::one_sided_ci(m, set2, k, Alpha(0.05));
  const RobustCI b = robust_ci::one_sided_ci(neg, set2, kneg, Alpha(0.05));
  EXPECT_NEAR(a.estimate, -b.estimate, 1e-12);
  EXPECT_NEAR(a.estimate - a.lower, b.estimate - b.lower, 1e-12);
}

TEST(OneSidedCi, OptimalBeatsEfficientGmm) {
  mgtest::Rng rng(45);
  const MomentModel m = mgtest::random_model(rng, 5, 1);
  const MisspecSet set{rng.matrix(5, 2), Norm::L2, 2.0};
  const auto f = sensitivity::frontier(m, set);
  const RobustCI opt = robust_ci::optimal_one_sided_ci(m, set, f, Alpha(0.05));
  const RobustCI naive = robust_ci::one_sided_ci(m, set, efficient_sensitivity(m), Alpha(0.05));
  const double zb = critval::norm_quantile(0.8);
  EXPECT_LE(opt.estimate - opt.lower + zb * opt.std_error, naive.estimate - naive.lower + zb * naive.std_error + 1e-12);
}

TEST(EquivalentWeighting, EfficientGmmRoundTrip) {
  mgtest::Rng rng(46);
  const MomentModel m = mgtest::random_model(rng, 6, 2);
  const Sensitivity k = efficient_sensitivity(m);
  const Matrix w = robust_ci::equivalent_weighting(m, k, Matrix::Identity(2, 2), Matrix::Identity(4, 4));
  EXPECT_LE(max_rel_diff(implied_sensitivity(m, w).k, k.k), 1e-8);
}

TEST(EquivalentWeighting, JustIdentified) {
  mgtest::Rng rng(47);
  const MomentModel m = mgtest::random_model(rng, 3, 3);
  const Sensitivity k{-(m.h_deriv * m.gamma.inverse()).transpose()};
  const Matrix w = robust_ci::equivalent_weighting(m, k, Matrix::Identity(3, 3), Matrix(0, 0));
  EXPECT_LE(max_rel_diff(implied_sensitivity(m, w).k, k.k), 1e-8);
}

TEST(EquivalentWeighting, FrontierKnotsRoundTrip) {
  mgtest::Rng rng(48);
  int checked = 0;
  while (checked < 100) {
    const int dt = rng.integer(1, 2);
    const int dg = rng.integer(dt + 1, 6);
    const MomentModel m = mgtest::random_model(rng, dg, dt);
    const MisspecSet set{rng.matrix(dg, rng.integer(1, dg - 1)), checked % 2 ? Norm::L2 : Norm::Linf, 1.0};
    const auto f = sensitivity::frontier(m, set);
    const auto& kn = f.knots()[static_cast<std::size_t>(rng.integer(0, static_cast<int>(f.knots().size()) - 1))];
    const Matrix a = rng.matrix(dt, dt);
    const Matrix w1 = a * a.transpose() + Matrix::Identity(dt, dt);
    const Matrix w = robust_ci::equivalent_weighting(m, kn.k, w1, Matrix::Identity(dg - dt, dg - dt));
    EXPECT_LE(max_rel_diff(implied_sensitivity(m, w).k, kn.k.k), 1e-8);
    ++checked;
  }
}

TEST(EquivalentWeighting, Errors) {
  mgtest::Rng rng(49);
  const MomentModel m = mgtest::random_model(rng, 4, 1);
  const Sensitivity k = efficient_sensitivity(m);
  try {
    robust_ci::equivalent_weighting(m, k, Matrix::Zero(1, 1), Matrix::Identity(3, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularW1);
  }
  try {
    robust_ci::equivalent_weighting(m, Sensitivity{k.k + Vector::Ones(4)}, Matrix::Identity(1, 1),
                                    Matrix::Identity(3, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoValidS);
  }
}

TEST(CiCurve, ZeroOnlyIsWald) {
  mgtest::Rng rng(50);
  const MomentModel m = mgtest::random_model(rng, 4, 1);
  const MisspecSet shape{rng.matrix(4, 1), Norm::L2, 1.0};
  const auto f = sensitivity::frontier(m, shape);
  const auto curve = robust_ci::ci_curve(m, shape, {0.0}, f, Alpha(0.05));
  ASSERT_EQ(curve.size(), 1u);
  const Sensitivity k0 = efficient_sensitivity(m);
  EXPECT_NEAR(curve[0].second.half_length, critval::norm_quantile(0.975) * std::sqrt(k0.k.dot(m.sigma * k0.k) / m.n),
              1e-12);
}

TEST(CiCurve, HalfLengthNondecreasingInM) {
  mgtest::Rng rng(51);
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(0.25 * i);
  for (int t = 0; t < 20; ++t) {
    const int dg = rng.integer(2, 6);
    const MomentModel m = mgtest::random_model(rng, dg, 1);
    const MisspecSet shape{rng.matrix(dg, rng.integer(1, dg - 1)), t % 2 ? Norm::L2 : Norm::Linf, 1.0};
    const auto f = sensitivity::frontier(m, shape);
    const auto curve = robust_ci::ci_curve(m, shape, grid, f, Alpha(0.05));
    for (std::size_t j = 1; j < curve.size(); ++j) {
      EXPECT_GE(curve[j].second.half_length, curve[j - 1].second.half_length * (1 - 1e-9));
    }
  }
}

TEST(CiCurve, MatchesPointwiseRecomputation) {
  const MomentModel m = scalar_model();
  const MisspecSet shape = scalar_set(1.0);
  const auto f = sensitivity::frontier(m, shape);
  const auto curve = robust_ci::ci_curve(m, shape, {0.0, 0.5, 1.0, 3.0}, f, Alpha(0.05));
  for (const auto& [mm, ci] : curve) {
    const RobustCI ref = robust_ci::two_sided_ci_for(m, shape.with_m(mm), Sensitivity{Vector::Ones(1)}, Alpha(0.05));
    EXPECT_NEAR(ci.half_length, ref.half_length, 1e-14);
    EXPECT_NEAR(ci.half_length, oracle::cv_alpha_oracle(mm, Alpha(0.05)) / 10.0, 1e-12);
  }
}

TEST(CiCurve, RejectsBadGrid) {
  const MomentModel m = scalar_model();
  const auto f = sensitivity::frontier(m, scalar_set(1.0));
  EXPECT_THROW(robust_ci::ci_curve(m, scalar_set(1.0), {1.0, 0.5}, f, Alpha(0.05)), Error);
  EXPECT_THROW(robust_ci::ci_curve(m, scalar_set(1.0), {-1.0}, f, Alpha(0.05)), Error);
}

TEST(CiCurve, LimitingCoverageAtWorstCase) {
  mgtest::Rng rng(52);
  const MomentModel m = mgtest::random_model(rng, 3, 1);
  const MisspecSet set{rng.matrix(3, 1), Norm::L2, 1.0};
  const auto f = sensitivity::frontier(m, set);
  const LambdaChoice ch = sensitivity::select_lambda(f, 1.0, Alpha(0.05), Criterion::CiLength);
  const Vector c = oracle::adversarial_c(ch.knot.k, set);
  const CoverageReport rep = oracle::mc_coverage(m, set, Alpha(0.05), c, 20000, 7);
  EXPECT_GE(rep.coverage, 0.95 - 3 * rep.mc_stderr);
}
