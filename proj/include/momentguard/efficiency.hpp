#pragma once

#include <functional>
#include <memory>
#include <utility>

#include "momentguard/critval.hpp"
#include "momentguard/model.hpp"
#include "momentguard/sensitivity.hpp"

namespace momentguard {

/// One point on the modulus of continuity of the limiting experiment.
struct ModulusSolution {
  double delta = 0.0;
  double omega = 0.0;        ///< omega(delta) = 2 H theta_delta
  double omega_prime = 0.0;  ///< sqrt(k_delta' Sigma k_delta)
  Vector theta_star;
  Vector c_star;
  Sensitivity k_delta;
  double primal_omega = 0.0;  ///< 2 H theta_star at the recovered maximizer
};

struct EfficiencyReport {
  double kappa_two_sided = 0.0;
  double kappa_one_sided = 0.0;
  double universal_lower = 0.0;
  double alpha = 0.05;
  double beta = 0.8;
};

namespace efficiency {

/// Solves  sup H theta  s.t.  (c - Gamma theta)' Sigma^{-1} (c - Gamma theta) <= delta^2 / 4,
/// c in C(M), through its dual  omega(delta) = min_k delta sd(k) + 2 M ||B'k||_{p'}
/// over k with H = -k'Gamma. The dual minimizer lies on the bias-variance
/// frontier, which is built once per solver.
class ModulusSolver {
 public:
  ModulusSolver(const MomentModel& model, const MisspecSet& set);

  ModulusSolution solve(double delta) const;
  /// (omega, omega') without primal recovery.
  std::pair<double, double> omega(double delta) const;

  const MomentModel& model() const { return model_; }
  const MisspecSet& set() const { return set_; }

 private:
  std::pair<double, FrontierKnot> dual(double delta) const;

  MomentModel model_;
  MisspecSet set_;
  std::unique_ptr<SensitivityFrontier> frontier_;
  std::optional<Sensitivity> subspace_limit_;  // p = 2, lambda -> infinity
};

ModulusSolution half_modulus(const MomentModel& model, const MisspecSet& set, double delta);

/// kappa* for an arbitrary modulus given as delta -> (omega, right derivative).
double kappa_from_modulus(const std::function<std::pair<double, double>(double)>& omega, Alpha alpha);

double kappa_two_sided(const MomentModel& model, const MisspecSet& set, Alpha alpha);

/// Universal lower bound on kappa* over centrosymmetric convex sets.
double universal_lower_bound(Alpha alpha);

/// kappa* when C is a linear subspace (omega linear).
double kappa_linear_subspace(Alpha alpha);

/// kappa* for B = Sigma^{1/2}, p = 2.
double kappa_cressie_read(double m, Alpha alpha);

/// omega(2 d) / (omega(d) + d omega'(d)) with d = z_{1-alpha} + z_beta.
double kappa_one_sided(const MomentModel& model, const MisspecSet& set, Alpha alpha, double beta = 0.8);

/// Sensitivity of GLS using only the moments orthogonal to col(B). A B with
/// zero columns gives efficient GMM.
Sensitivity gls_subspace_sensitivity(const MomentModel& model, const Matrix& b);

EfficiencyReport report(const MomentModel& model, const MisspecSet& set, Alpha alpha, double beta = 0.8);

}  // namespace efficiency
}  // namespace momentguard
