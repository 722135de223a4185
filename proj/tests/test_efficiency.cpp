#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "momentguard/efficiency.hpp"
#include "momentguard/error.hpp"
#include "momentguard/oracle.hpp"
#include "test_support.hpp"

using namespace momentguard;
using mgtest::max_rel_diff;

namespace {

double sd_efficient(const MomentModel& m) {
  const Sensitivity k = efficient_sensitivity(m);
  return std::sqrt(k.k.dot(m.sigma * k.k));
}

double constraint_lhs(const MomentModel& m, const ModulusSolution& s) {
  const Vector r = s.c_star - m.gamma * s.theta_star;
  return r.dot(linalg::spd_solve(m.sigma, r).col(0));
}

}  // namespace

TEST(HalfModulus, CressieReadClosedForm) {
  mgtest::Rng rng(60);
  for (int t = 0; t < 5; ++t) {
    const MomentModel m = mgtest::random_model(rng, 4, 1);
    const double mm = rng.uniform(0.2, 3.0);
    const MisspecSet set{linalg::sym_sqrt(m.sigma), Norm::L2, mm};
    const efficiency::ModulusSolver solver(m, set);
    for (double delta : {0.1, 1.0, 2.0, 5.0}) {
      const ModulusSolution s = solver.solve(delta);
      EXPECT_NEAR(s.omega, (delta + 2 * mm) * sd_efficient(m), 1e-8 * s.omega);
      EXPECT_NEAR(s.primal_omega, s.omega, 1e-7 * s.omega);
    }
  }
}

TEST(HalfModulus, ZeroMIsLinear) {
  mgtest::Rng rng(61);
  const MomentModel m = mgtest::random_model(rng, 5, 2);
  for (Norm p : {Norm::L2, Norm::Linf}) {
    const MisspecSet set{rng.matrix(5, 2), p, 0.0};
    for (double delta : {0.5, 3.0}) {
      const ModulusSolution s = efficiency::half_modulus(m, set, delta);
      EXPECT_NEAR(s.omega, delta * sd_efficient(m), 1e-9 * s.omega);
    }
  }
}

TEST(HalfModulus, MatchesGridOracle) {
  mgtest::Rng rng(62);
  for (int t = 0; t < 4; ++t) {
    const MomentModel m = mgtest::random_model(rng, 2, 1);
    for (Norm p : {Norm::Linf, Norm::L2}) {
      const MisspecSet set{rng.matrix(2, 1), p, rng.uniform(0.3, 2.0)};
      for (double delta : {0.5, 2.0, 4.0}) {
        const double w = efficiency::half_modulus(m, set, delta).omega;
        const double g = oracle::grid_modulus(m, set, delta, 400);
        EXPECT_LE(g, w + 1e-9);
        EXPECT_NEAR(g, w, 1e-3 * w);
      }
    }
  }
  // two-dimensional gamma and theta
  const MomentModel m = mgtest::random_model(rng, 4, 2);
  const MisspecSet set{rng.matrix(4, 2), Norm::Linf, 1.0};
  const double w = efficiency::half_modulus(m, set, 2.0).omega;
  const double g = oracle::grid_modulus(m, set, 2.0, 100);
  EXPECT_LE(g, w + 1e-9);
  EXPECT_NEAR(g, w, 1e-2 * w);
}

TEST(HalfModulus, GridOracleAtZeroM) {
  mgtest::Rng rng(63);
  const MomentModel m = mgtest::random_model(rng, 2, 1);
  const MisspecSet set{rng.matrix(2, 1), Norm::Linf, 0.0};
  EXPECT_NEAR(oracle::grid_modulus(m, set, 1.5, 50), 1.5 * sd_efficient(m), 1e-9);
}

TEST(HalfModulus, InvariantsOnRandomInstances) {
  mgtest::Rng rng(64);
  for (int t = 0; t < 20; ++t) {
    const int dt = rng.integer(1, 2);
    const int dg = rng.integer(dt + 1, 6);
    const MomentModel m = mgtest::random_model(rng, dg, dt);
    const MisspecSet set{rng.matrix(dg, rng.integer(1, dg)), t % 2 ? Norm::L2 : Norm::Linf, rng.uniform(0.2, 3.0)};
    SCOPED_TRACE("dg=" + std::to_string(dg) + " dt=" + std::to_string(dt) + " dgam=" +
                 std::to_string(set.b.cols()) + (t % 2 ? " l2" : " linf"));
    const efficiency::ModulusSolver solver(m, set);
    std::vector<double> w;
    const double h = 0.05;
    for (int i = 1; i <= 100; ++i) {
      const double delta = h * i;
      const ModulusSolution s = solver.solve(delta);
      w.push_back(s.omega);
      EXPECT_GE(s.omega, 0.0);
      EXPECT_NEAR(constraint_lhs(m, s), delta * delta / 4, 1e-6 * delta * delta);
      EXPECT_NEAR(2.0 * (m.h_deriv * s.theta_star)(0), s.omega, 1e-7 * s.omega);
      EXPECT_LE(sensitivity_constraint_residual(m, s.k_delta), 1e-9 * m.h_deriv.cwiseAbs().maxCoeff());
      EXPECT_NEAR(s.omega_prime, std::sqrt(s.k_delta.k.dot(m.sigma * s.k_delta.k)), 1e-12 * s.omega_prime);
    }
    for (std::size_t i = 1; i < w.size(); ++i) EXPECT_GE(w[i], w[i - 1] - 1e-10);
    for (std::size_t i = 1; i + 1 < w.size(); ++i) EXPECT_LE(w[i + 1] - 2 * w[i] + w[i - 1], 1e-6);
  }
}

TEST(HalfModulus, SlopeMatchesFiniteDifference) {
  mgtest::Rng rng(65);
  for (int t = 0; t < 20; ++t) {
    const int dt = rng.integer(1, 2);
    const int dg = rng.integer(dt + 1, 6);
    const MomentModel m = mgtest::random_model(rng, dg, dt);
    const MisspecSet set{rng.matrix(dg, rng.integer(1, dg)), t % 2 ? Norm::L2 : Norm::Linf, 1.0};
    const efficiency::ModulusSolver solver(m, set);
    for (double delta : {0.7, 2.5}) {
      const double eps = 1e-6 * delta;
      const auto [w0, wp] = solver.omega(delta);
      const double fd = (solver.omega(delta + eps).first - w0) / eps;
      EXPECT_NEAR(fd, wp, 1e-4 * wp);
    }
  }
}

TEST(HalfModulus, WeightsNormalizedForVectorTheta) {
  mgtest::Rng rng(66);
  for (int t = 0; t < 20; ++t) {
    const int dt = rng.integer(2, 3);
    const int dg = rng.integer(dt + 1, 7);
    const MomentModel m = mgtest::random_model(rng, dg, dt);
    const MisspecSet set{rng.matrix(dg, rng.integer(1, dg - dt)), t % 2 ? Norm::L2 : Norm::Linf, 1.5};
    const ModulusSolution s = efficiency::half_modulus(m, set, 1.8);
    EXPECT_LE(sensitivity_constraint_residual(m, s.k_delta), 1e-9 * m.h_deriv.cwiseAbs().maxCoeff());
  }
}

TEST(HalfModulus, RejectsNonpositiveDelta) {
  mgtest::Rng rng(67);
  const MomentModel m = mgtest::random_model(rng, 3, 1);
  const efficiency::ModulusSolver solver(m, MisspecSet{rng.matrix(3, 1), Norm::L2, 1.0});
  try {
    solver.solve(0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InfeasibleDelta);
  }
}

TEST(Kappa, LinearSubspaceValue) {
  EXPECT_NEAR(efficiency::kappa_linear_subspace(Alpha(0.05)), 0.8499, 5e-5);
  EXPECT_GE(efficiency::kappa_linear_subspace(Alpha(0.05)), 1.6449 / 1.9600);
  for (double a : {0.01, 0.1, 0.32, 0.5}) {
    EXPECT_GE(efficiency::kappa_linear_subspace(Alpha(a)),
              critval::norm_quantile(1 - a) / critval::norm_quantile(1 - a / 2));
  }
}

TEST(Kappa, LinearSubspaceNumeratorByQuadrature) {
  const double a = 0.32;
  const double z1 = critval::norm_quantile(1 - a);
  // (1 - alpha) E[2(z - Z) | Z <= z] / (2 z_{1-alpha/2})
  auto f = [&](double x) { return (z1 - x) * std::exp(-0.5 * x * x) / std::sqrt(2 * M_PI); };
  const double numer = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -40.0, z1, 15, 1e-13);
  EXPECT_NEAR(numer / critval::norm_quantile(1 - a / 2), efficiency::kappa_linear_subspace(Alpha(a)), 1e-10);
}

TEST(Kappa, LinearSubspaceLimitOfLargeM) {
  mgtest::Rng rng(68);
  const MomentModel m = mgtest::random_model(rng, 5, 1);
  const MisspecSet set{mgtest::last_columns(5, 2), Norm::Linf, 1e4};
  EXPECT_NEAR(efficiency::kappa_two_sided(m, set, Alpha(0.05)), 0.8499, 1e-4);
}

TEST(Kappa, CressieReadClosedForm) {
  mgtest::Rng rng(69);
  const MomentModel m = mgtest::random_model(rng, 4, 1);
  for (double mm : {0.0, 0.5, 1.0, 3.0}) {
    const MisspecSet set{linalg::sym_sqrt(m.sigma), Norm::L2, mm};
    EXPECT_NEAR(efficiency::kappa_two_sided(m, set, Alpha(0.05)), efficiency::kappa_cressie_read(mm, Alpha(0.05)), 1e-4);
  }
}

TEST(Kappa, UniversalLowerBound) {
  EXPECT_NEAR(efficiency::universal_lower_bound(Alpha(0.05)), 0.717, 5e-4);
  const double a = 0.5;
  const double z1 = critval::norm_quantile(0.5);
  const double z2 = critval::norm_quantile(0.75);
  const double zt = z1 - z2;
  const double direct = (z1 * (1 - a) - zt * critval::norm_cdf(zt) + critval::norm_pdf(z1) - critval::norm_pdf(zt)) / z2;
  EXPECT_NEAR(efficiency::universal_lower_bound(Alpha(a)), direct, 1e-15);
}

TEST(Kappa, SharpnessCaseAttainsBound) {
  for (double a : {0.05, 0.1}) {
    const double z2 = critval::norm_quantile(1 - a / 2);
    const double k0 = 1.7;
    auto omega = [&](double d) {
      return d < 2 * z2 ? std::pair{k0 * d, k0} : std::pair{2 * z2 * k0, 0.0};
    };
    EXPECT_NEAR(efficiency::kappa_from_modulus(omega, Alpha(a)), efficiency::universal_lower_bound(Alpha(a)), 1e-6);
  }
}

TEST(Kappa, BoundsOnRandomInstances) {
  mgtest::Rng rng(70);
  const double lb = efficiency::universal_lower_bound(Alpha(0.05));
  for (int t = 0; t < 20; ++t) {
    const int dt = rng.integer(1, 2);
    const int dg = rng.integer(dt + 1, 6);
    const MomentModel m = mgtest::random_model(rng, dg, dt);
    const MisspecSet set{rng.matrix(dg, rng.integer(1, dg)), t % 2 ? Norm::L2 : Norm::Linf, rng.uniform(0.1, 5.0)};
    const double k = efficiency::kappa_two_sided(m, set, Alpha(0.05));
    EXPECT_GT(k, 0.0);
    EXPECT_LE(k, 1.0 + 1e-9);
    EXPECT_GE(k, lb - 1e-6);
    EXPECT_GE(k, 0.717 - 1e-6);
  }
}

TEST(Kappa, InvariantToScalingH) {
  mgtest::Rng rng(71);
  MomentModel m = mgtest::random_model(rng, 4, 2);
  const MisspecSet set{rng.matrix(4, 2), Norm::Linf, 1.2};
  const double k1 = efficiency::kappa_two_sided(m, set, Alpha(0.05));
  m.h_deriv *= 7.5;
  EXPECT_NEAR(efficiency::kappa_two_sided(m, set, Alpha(0.05)), k1, 1e-8);
}

TEST(KappaOneSided, CressieReadIsOne) {
  mgtest::Rng rng(72);
  const MomentModel m = mgtest::random_model(rng, 4, 1);
  EXPECT_NEAR(efficiency::kappa_one_sided(m, MisspecSet{linalg::sym_sqrt(m.sigma), Norm::L2, 1.3}, Alpha(0.05)), 1.0,
              1e-9);
  EXPECT_NEAR(efficiency::kappa_one_sided(m, MisspecSet{rng.matrix(4, 2), Norm::Linf, 0.0}, Alpha(0.05)), 1.0, 1e-12);
}

TEST(KappaOneSided, RandomInstancesInUnitInterval) {
  mgtest::Rng rng(73);
  for (int t = 0; t < 20; ++t) {
    const MomentModel m = mgtest::random_model(rng, 5, 1);
    const double k = efficiency::kappa_one_sided(m, MisspecSet{rng.matrix(5, 2), Norm::Linf, rng.uniform(0.1, 4)},
                                                 Alpha(0.05), 0.8);
    EXPECT_GT(k, 0.0);
    EXPECT_LE(k, 1.0 + 1e-12);
  }
  const MomentModel m = mgtest::random_model(rng, 3, 1);
  EXPECT_THROW(efficiency::kappa_one_sided(m, MisspecSet{rng.matrix(3, 1), Norm::L2, 1}, Alpha(0.05), 1.0), Error);
}

TEST(GlsSubspace, EmptyBIsEfficientGmm) {
  mgtest::Rng rng(74);
  const MomentModel m = mgtest::random_model(rng, 4, 2);
  EXPECT_LE(max_rel_diff(efficiency::gls_subspace_sensitivity(m, Matrix(4, 0)).k, efficient_sensitivity(m).k), 1e-12);
}

TEST(GlsSubspace, DropsInvalidMoments) {
  mgtest::Rng rng(75);
  const MomentModel m = mgtest::random_model(rng, 6, 2);
  const Vector k = efficiency::gls_subspace_sensitivity(m, mgtest::last_columns(6, 3)).k;
  EXPECT_LE(k.tail(3).cwiseAbs().maxCoeff(), 1e-12 * k.cwiseAbs().maxCoeff());
  EXPECT_LE(sensitivity_constraint_residual(m, Sensitivity{k}), 1e-12);
  // equals efficient GMM on the first three moments
  MomentModel sub = m;
  sub.gamma = m.gamma.topRows(3);
  sub.sigma = m.sigma.topLeftCorner(3, 3);
  sub.g_init = m.g_init.head(3);
  EXPECT_LE(max_rel_diff(k.head(3), efficient_sensitivity(sub).k), 1e-10);
}

TEST(GlsSubspace, Errors) {
  mgtest::Rng rng(76);
  const MomentModel m = mgtest::random_model(rng, 4, 2);
  try {
    efficiency::gls_subspace_sensitivity(m, rng.matrix(4, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooManyInvalidMoments);
  }
  Matrix b = Matrix::Zero(4, 2);
  b.col(0) = m.gamma.col(0);
  b.col(1) = m.gamma.col(1) ;
  // B spans col(Gamma), so the remaining moments say nothing about theta
  try {
    efficiency::gls_subspace_sensitivity(m, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficiency);
  }
}

TEST(Report, CollectsBounds) {
  mgtest::Rng rng(77);
  const MomentModel m = mgtest::random_model(rng, 4, 1);
  const MisspecSet set{rng.matrix(4, 2), Norm::L2, 1.0};
  const EfficiencyReport r = efficiency::report(m, set, Alpha(0.1), 0.7);
  EXPECT_EQ(r.alpha, 0.1);
  EXPECT_EQ(r.beta, 0.7);
  EXPECT_NEAR(r.kappa_two_sided, efficiency::kappa_two_sided(m, set, Alpha(0.1)), 1e-14);
  EXPECT_NEAR(r.kappa_one_sided, efficiency::kappa_one_sided(m, set, Alpha(0.1), 0.7), 1e-14);
  EXPECT_EQ(r.universal_lower, efficiency::universal_lower_bound(Alpha(0.1)));
  EXPECT_GE(r.kappa_two_sided, r.universal_lower - 1e-6);
}
