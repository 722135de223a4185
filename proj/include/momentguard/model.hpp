#pragma once

#include <cstdint>

#include "momentguard/linalg.hpp"

namespace momentguard {

/// Local reduced form of a moment-condition model evaluated at an initial
/// estimate: everything downstream needs only these six objects.
struct MomentModel {
  Matrix gamma;      ///< d_g x d_theta derivative of the moment map
  Matrix sigma;      ///< d_g x d_g asymptotic variance of sqrt(n) * g_hat
  RowVector h_deriv; ///< 1 x d_theta derivative of the target functional
  Vector g_init;     ///< sample moments at the initial estimate
  double h_init = 0.0;
  std::int64_t n = 1;

  Eigen::Index dg() const { return gamma.rows(); }
  Eigen::Index dtheta() const { return gamma.cols(); }
};

enum class Norm { L2, Linf };

/// C(M) = { B gamma : ||gamma||_p <= M }.
struct MisspecSet {
  Matrix b;
  Norm p = Norm::L2;
  double m = 1.0;

  Eigen::Index dgamma() const { return b.cols(); }
  MisspecSet with_m(double new_m) const { return MisspecSet{b, p, new_m}; }
};

/// Influence weights of an asymptotically linear estimator: its local bias
/// under misspecification c is k'c.
struct Sensitivity {
  Vector k;
};

// Eigenvalue floor for Sigma, relative to its largest eigenvalue.
inline constexpr double kSigmaFloor = 1e-10;

/// Returns the model unchanged when all invariants hold; throws Error naming
/// the offending field otherwise.
MomentModel validate_model(const MomentModel& model);

/// Checks B, p and M against a model with d_g moments.
MisspecSet validate_set(const MisspecSet& set, Eigen::Index dg);

/// ||H + k' Gamma||_inf
double sensitivity_constraint_residual(const MomentModel& model, const Sensitivity& k);

/// Sensitivity of the GMM estimator with weighting matrix w:
/// k' = -H (Gamma' W Gamma)^{-1} Gamma' W.
Sensitivity gmm_sensitivity(const MomentModel& model, const Matrix& w);

/// Efficient (Sigma^{-1}-weighted) GMM sensitivity.
Sensitivity efficient_sensitivity(const MomentModel& model);

}  // namespace momentguard
