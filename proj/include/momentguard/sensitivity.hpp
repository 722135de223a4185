#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "momentguard/critval.hpp"
#include "momentguard/model.hpp"

namespace momentguard {

namespace sensitivity {

/// Closed-form ridge-type sensitivity k_lambda for a fixed (model, B), with
/// the lambda-independent factorizations done once.
class L2Solver {
 public:
  L2Solver(const MomentModel& model, const Matrix& b);
  Sensitivity operator()(double lambda) const;

 private:
  Vector kp_;     // particular solution of H = -k'Gamma
  Matrix nmat_;   // orthonormal basis of null(Gamma')
  Matrix nsn_;    // N' Sigma N
  Matrix nb_;     // N' B
  Vector nsk_;    // N' Sigma k_p
  Vector bk_;     // B' k_p
};

}  // namespace sensitivity

struct FrontierKnot {
  double lambda = 0.0;
  Sensitivity k;
  double bbar = 0.0;  ///< sup over C(1) of |k'c|
  double var = 0.0;   ///< k' Sigma k
};

/// Bias-variance optimizing path {k_lambda} for the unit set C(1).
///
/// For p = 2 the knots are a log-spaced lambda grid and `at` evaluates the
/// closed form anywhere. For p = inf the knots are the homotopy breakpoints;
/// k is linear between knots and constant beyond the last one, so `at` is
/// exact there too.
class SensitivityFrontier {
 public:
  SensitivityFrontier(MomentModel model, MisspecSet unit_set, std::vector<FrontierKnot> knots);

  const std::vector<FrontierKnot>& knots() const { return knots_; }
  const MisspecSet& set() const { return set_; }
  const MomentModel& model() const { return model_; }
  Norm norm() const { return set_.p; }
  bool empty() const { return knots_.empty(); }

  FrontierKnot at(double lambda) const;

 private:
  MomentModel model_;
  MisspecSet set_;
  std::vector<FrontierKnot> knots_;
  std::shared_ptr<const sensitivity::L2Solver> l2_;
};

enum class Criterion { CiLength, Mse };

struct LambdaChoice {
  double lambda_star = 0.0;
  Criterion criterion = Criterion::CiLength;
  double m = 0.0;
  FrontierKnot knot;   ///< frontier point at lambda_star
  double value = 0.0;  ///< criterion value at lambda_star
};

namespace sensitivity {

/// M * ||B'k||_{p'} with p' the Holder complement of p.
double worst_case_bias(const Sensitivity& k, const MisspecSet& set);

/// Minimizer of k'(Sigma + lambda B B')k subject to H = -k'Gamma, i.e.
/// k' = -H (Gamma' W Gamma)^{-1} Gamma' W with W = (lambda B B' + Sigma)^{-1}.
Sensitivity l2_sensitivity(const MomentModel& model, const Matrix& b, double lambda);

/// Full piecewise-linear solution path of
///   min k'Sigma k / 2 + lambda ||B'k||_1  s.t.  H = -k'Gamma
/// via the LAR-LASSO style homotopy, starting from efficient GMM at lambda = 0.
SensitivityFrontier linf_path(const MomentModel& model, const Matrix& b);

/// Same, with a caller-supplied orthonormal basis of the complement of col(B).
SensitivityFrontier linf_path(const MomentModel& model, const Matrix& b, const Matrix& b_perp);

/// Default lambda grid for p = 2: 50 log-spaced points on [1e-6, 1e6] scaled
/// by tr(Sigma) / tr(BB'), preceded by lambda = 0.
std::vector<double> default_l2_grid(const MomentModel& model, const Matrix& b);

/// Dispatch on set.p. The magnitude set.m is ignored (the path is computed for
/// C(1) and reused for every M by scaling).
SensitivityFrontier frontier(const MomentModel& model, const MisspecSet& set,
                             const std::optional<std::vector<double>>& l2_grid = std::nullopt);

double criterion_value(const FrontierKnot& knot, double m, Alpha alpha, Criterion criterion);

/// Lambda minimizing the CI length 2 cv(m B/sd) sd or the MSE (m B)^2 + V.
LambdaChoice select_lambda(const SensitivityFrontier& frontier, double m, Alpha alpha,
                           Criterion criterion);

/// Lambda minimizing the worst-case beta-quantile of excess length of the
/// lower one-sided CI: m B + (z_{1-alpha} + z_beta) sd.
LambdaChoice select_lambda_one_sided(const SensitivityFrontier& frontier, double m, Alpha alpha,
                                     double beta);

/// Minimizes an arbitrary objective of the frontier point over the path:
/// knots plus a subgrid on each segment, then Brent refinement around the
/// best candidate.
std::pair<double, FrontierKnot> minimize_over_frontier(
    const SensitivityFrontier& frontier, const std::function<double(const FrontierKnot&)>& objective);

}  // namespace sensitivity
}  // namespace momentguard
