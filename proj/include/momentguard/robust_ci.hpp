#pragma once

#include <utility>
#include <vector>

#include "momentguard/critval.hpp"
#include "momentguard/model.hpp"
#include "momentguard/sensitivity.hpp"

namespace momentguard {

enum class CiSide { TwoSided, LowerOneSided };

/// Misspecification-robust interval for h(theta). For a lower one-sided
/// interval `upper` is +inf and `half_length` is zero.
struct RobustCI {
  double estimate = 0.0;
  double half_length = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double max_bias = 0.0;   ///< M * Bbar / sqrt(n)
  double std_error = 0.0;  ///< sqrt(k' Sigma k / n)
  double lambda_star = 0.0;
  CiSide side = CiSide::TwoSided;
};

namespace robust_ci {

/// h_init + k' g_init
double one_step(const MomentModel& model, const Sensitivity& k);

/// Two-sided interval estimate +- cv(maxbias / se) * se for a given k.
RobustCI two_sided_ci_for(const MomentModel& model, const MisspecSet& set, const Sensitivity& k,
                          Alpha alpha, double lambda = 0.0);

/// Picks lambda* on the frontier by the given criterion and reports the
/// interval. The standard error always uses model.sigma, so the frontier may
/// have been built from a different variance estimate.
RobustCI two_sided_ci(const MomentModel& model, const MisspecSet& set, const SensitivityFrontier& frontier,
                      Alpha alpha, Criterion criterion = Criterion::CiLength);

/// Lower endpoint estimate - maxbias - z_{1-alpha} se.
RobustCI one_sided_ci(const MomentModel& model, const MisspecSet& set, const Sensitivity& k, Alpha alpha);

/// Lower one-sided interval with k chosen on the frontier to minimize the
/// worst-case beta quantile of excess length.
RobustCI optimal_one_sided_ci(const MomentModel& model, const MisspecSet& set,
                              const SensitivityFrontier& frontier, Alpha alpha, double beta = 0.8);

/// A d_g x d_g weighting matrix whose GMM sensitivity is k:
/// W = S W1 S' + Gamma_perp W2 Gamma_perp' with S'Gamma = -I and S H' = k.
/// w2 is (d_g - d_theta) square.
Matrix equivalent_weighting(const MomentModel& model, const Sensitivity& k, const Matrix& w1, const Matrix& w2);

/// One two-sided interval per entry of m_grid, each with its own lambda*.
std::vector<std::pair<double, RobustCI>> ci_curve(const MomentModel& model, const MisspecSet& shape,
                                                  const std::vector<double>& m_grid,
                                                  const SensitivityFrontier& frontier, Alpha alpha,
                                                  Criterion criterion = Criterion::CiLength);

}  // namespace robust_ci
}  // namespace momentguard
