#include "momentguard/robust_ci.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "momentguard/error.hpp"

namespace momentguard::robust_ci {

namespace {

void check_k(const MomentModel& model, const Sensitivity& k) {
  if (k.k.size() != model.dg()) {
    throw Error(ErrorCode::DimensionMismatch, "k",
                "expected length " + std::to_string(model.dg()) + ", got " + std::to_string(k.k.size()));
  }
}

double std_error(const MomentModel& model, const Sensitivity& k) {
  return std::sqrt(k.k.dot(model.sigma * k.k) / static_cast<double>(model.n));
}

}  // namespace

double one_step(const MomentModel& model, const Sensitivity& k) {
  check_k(model, k);
  if (model.g_init.size() != model.dg()) throw Error(ErrorCode::DimensionMismatch, "g_init", "length differs from d_g");
  return model.h_init + k.k.dot(model.g_init);
}

RobustCI two_sided_ci_for(const MomentModel& model, const MisspecSet& set, const Sensitivity& k, Alpha alpha,
                          double lambda) {
  check_k(model, k);
  RobustCI ci;
  ci.side = CiSide::TwoSided;
  ci.lambda_star = lambda;
  ci.estimate = one_step(model, k);
  ci.std_error = std_error(model, k);
  ci.max_bias = sensitivity::worst_case_bias(k, set) / std::sqrt(static_cast<double>(model.n));
  ci.half_length = critval::cv_alpha(ci.max_bias / ci.std_error, alpha) * ci.std_error;
  ci.lower = ci.estimate - ci.half_length;
  ci.upper = ci.estimate + ci.half_length;
  return ci;
}

RobustCI two_sided_ci(const MomentModel& model, const MisspecSet& set, const SensitivityFrontier& frontier,
                      Alpha alpha, Criterion criterion) {
  const LambdaChoice choice = sensitivity::select_lambda(frontier, set.m, alpha, criterion);
  return two_sided_ci_for(model, set, choice.knot.k, alpha, choice.lambda_star);
}

RobustCI one_sided_ci(const MomentModel& model, const MisspecSet& set, const Sensitivity& k, Alpha alpha) {
  check_k(model, k);
  RobustCI ci;
  ci.side = CiSide::LowerOneSided;
  ci.estimate = one_step(model, k);
  ci.std_error = std_error(model, k);
  ci.max_bias = sensitivity::worst_case_bias(k, set) / std::sqrt(static_cast<double>(model.n));
  ci.lower = ci.estimate - ci.max_bias - critval::norm_quantile(1.0 - alpha.value()) * ci.std_error;
  ci.upper = std::numeric_limits<double>::infinity();
  return ci;
}

RobustCI optimal_one_sided_ci(const MomentModel& model, const MisspecSet& set,
                              const SensitivityFrontier& frontier, Alpha alpha, double beta) {
  const LambdaChoice choice = sensitivity::select_lambda_one_sided(frontier, set.m, alpha, beta);
  RobustCI ci = one_sided_ci(model, set, choice.knot.k, alpha);
  ci.lambda_star = choice.lambda_star;
  return ci;
}

Matrix equivalent_weighting(const MomentModel& model, const Sensitivity& k, const Matrix& w1, const Matrix& w2) {
  check_k(model, k);
  const Eigen::Index dg = model.dg();
  const Eigen::Index dt = model.dtheta();
  if (w1.rows() != dt || w1.cols() != dt) throw Error(ErrorCode::DimensionMismatch, "w1", "must be d_theta square");
  if (w2.rows() != dg - dt || w2.cols() != dg - dt) {
    throw Error(ErrorCode::DimensionMismatch, "w2", "must be (d_g - d_theta) square");
  }
  Eigen::FullPivLU<Matrix> w1_lu(w1);
  if (!w1_lu.isInvertible()) throw Error(ErrorCode::SingularW1, "w1", "singular");
  const double hscale = std::max(1.0, model.h_deriv.cwiseAbs().maxCoeff());
  if (sensitivity_constraint_residual(model, k) > 1e-8 * hscale) {
    throw Error(ErrorCode::NoValidS, "k", "k violates H = -k'Gamma, so no S exists");
  }
  const Matrix& g = model.gamma;
  const Matrix s0 = -g * (g.transpose() * g).ldlt().solve(Matrix::Identity(dt, dt));
  const Matrix gperp = linalg::orthogonal_complement(g);
  const Vector h = model.h_deriv.transpose();
  const Vector v = gperp.transpose() * (k.k - s0 * h);
  const Matrix c = v * h.transpose() / h.squaredNorm();
  const Matrix s = s0 + gperp * c;
  return s * w1 * s.transpose() + gperp * w2 * gperp.transpose();
}

std::vector<std::pair<double, RobustCI>> ci_curve(const MomentModel& model, const MisspecSet& shape,
                                                  const std::vector<double>& m_grid,
                                                  const SensitivityFrontier& frontier, Alpha alpha,
                                                  Criterion criterion) {
  for (std::size_t i = 0; i < m_grid.size(); ++i) {
    if (!(m_grid[i] >= 0.0) || !std::isfinite(m_grid[i])) {
      throw Error(ErrorCode::InvalidInput, "m_grid", "entries must be finite and nonnegative");
    }
    if (i > 0 && m_grid[i] < m_grid[i - 1]) throw Error(ErrorCode::InvalidInput, "m_grid", "must be ascending");
  }
  std::vector<std::pair<double, RobustCI>> out;
  out.reserve(m_grid.size());
  for (double m : m_grid) out.emplace_back(m, two_sided_ci(model, shape.with_m(m), frontier, alpha, criterion));
  return out;
}

}  // namespace momentguard::robust_ci
