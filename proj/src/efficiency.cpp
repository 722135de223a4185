#include "momentguard/efficiency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>

#include "momentguard/error.hpp"

namespace momentguard::efficiency {

namespace {

using critval::norm_cdf;
using critval::norm_pdf;
using critval::norm_quantile;

// lambda grid for the p = 2 modulus: much wider than the CI default because
// small delta pushes the dual minimizer toward lambda = infinity
std::vector<double> wide_l2_grid(const MomentModel& model, const Matrix& b) {
  const double bb = (b * b.transpose()).trace();
  const double scale = bb > 0.0 ? model.sigma.trace() / bb : 1.0;
  std::vector<double> grid{0.0};
  constexpr int kPoints = 81;
  for (int i = 0; i < kPoints; ++i) grid.push_back(scale * std::pow(10.0, -10.0 + 20.0 * i / (kPoints - 1)));
  return grid;
}

// Box-constrained least squares in the free coordinates of gamma by cyclic
// coordinate descent; the fixed coordinates keep their values.
void box_least_squares(const Matrix& a, const Vector& y, double bound, const std::vector<bool>& free,
                       Vector& gamma) {
  Vector resid = a * gamma - y;
  for (int sweep = 0; sweep < 500; ++sweep) {
    double moved = 0.0;
    for (Eigen::Index j = 0; j < gamma.size(); ++j) {
      if (!free[static_cast<std::size_t>(j)]) continue;
      const double aa = a.col(j).squaredNorm();
      if (aa == 0.0) continue;
      const double target = gamma(j) - a.col(j).dot(resid) / aa;
      const double next = std::clamp(target, -bound, bound);
      const double step = next - gamma(j);
      if (step != 0.0) {
        resid += step * a.col(j);
        gamma(j) = next;
        moved = std::max(moved, std::abs(step));
      }
    }
    if (moved <= 1e-15 * std::max(1.0, bound)) break;
  }
}

}  // namespace

ModulusSolver::ModulusSolver(const MomentModel& model, const MisspecSet& set) : model_(model), set_(set) {
  validate_set(set_, model_.dg());
  if (set_.p == Norm::L2) {
    frontier_ = std::make_unique<SensitivityFrontier>(
        sensitivity::frontier(model_, set_, wide_l2_grid(model_, set_.b)));
    if (set_.b.cols() <= model_.dg() - model_.dtheta()) {
      try {
        subspace_limit_ = gls_subspace_sensitivity(model_, set_.b);
      } catch (const Error&) {
        subspace_limit_.reset();
      }
    }
  } else {
    frontier_ = std::make_unique<SensitivityFrontier>(sensitivity::linf_path(model_, set_.b));
  }
}

std::pair<double, FrontierKnot> ModulusSolver::dual(double delta) const {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw Error(ErrorCode::InfeasibleDelta, "delta", "must be positive and finite");
  }
  const double m = set_.m;
  auto objective = [&](const FrontierKnot& k) { return delta * std::sqrt(k.var) + 2.0 * m * k.bbar; };
  auto best = sensitivity::minimize_over_frontier(*frontier_, objective);
  double value = objective(best.second);
  if (subspace_limit_) {
    FrontierKnot lim;
    lim.lambda = std::numeric_limits<double>::infinity();
    lim.k = *subspace_limit_;
    lim.var = lim.k.k.dot(model_.sigma * lim.k.k);
    lim.bbar = (set_.b.transpose() * lim.k.k).norm();
    const double v = objective(lim);
    if (v < value) {
      value = v;
      best.second = lim;
    }
  }
  return {value, best.second};
}

std::pair<double, double> ModulusSolver::omega(double delta) const {
  const auto [value, knot] = dual(delta);
  return {value, std::sqrt(knot.var)};
}

ModulusSolution ModulusSolver::solve(double delta) const {
  const auto [value, knot] = dual(delta);
  const Vector& k = knot.k.k;
  const double sd = std::sqrt(knot.var);
  const double t = delta / (2.0 * sd);
  const double m = set_.m;
  const Matrix& g = model_.gamma;
  const Matrix& b = set_.b;

  const Matrix s_inv_half = linalg::sym_inv_sqrt(model_.sigma);
  const Matrix wg = s_inv_half * g;
  const Eigen::HouseholderQR<Matrix> qr(wg);
  const Matrix q = qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
  const Matrix r = Matrix::Identity(g.rows(), g.rows()) - q * q.transpose();
  const Matrix a = r * s_inv_half * b;
  const Vector y = t * (r * (s_inv_half * (model_.sigma * k)));

  // c = B gamma maximizing -k'c; ties (zero entries of B'k) are broken so
  // that c - t Sigma k lies in col(Gamma), as required at the optimum
  const Vector u = b.transpose() * k;
  Vector gamma = Vector::Zero(b.cols());
  if (m > 0.0) {
    if (set_.p == Norm::Linf) {
      // zero is judged against |B||k|, since on the terminal knot every
      // entry of B'k is rounding noise
      const double utol = 1e-9 * b.norm() * k.norm();
      std::vector<bool> free(static_cast<std::size_t>(u.size()), false);
      for (Eigen::Index i = 0; i < u.size(); ++i) {
        if (std::abs(u(i)) > utol) {
          gamma(i) = u(i) > 0.0 ? -m : m;
        } else {
          free[static_cast<std::size_t>(i)] = true;
        }
      }
      box_least_squares(a, y, m, free, gamma);
    } else {
      const double unorm = u.norm();
      if (unorm > 1e-12 * b.norm() * k.norm()) {
        gamma = -m * u / unorm;
      } else {
        gamma = a.completeOrthogonalDecomposition().solve(y);
        if (gamma.norm() > m) gamma *= m / gamma.norm();
      }
    }
  }
  Vector c = b * gamma;

  // exact inner maximization over theta for this c
  const Matrix sinv_g = linalg::spd_solve(model_.sigma, g);
  const Matrix info = g.transpose() * sinv_g;
  const Vector theta_gls = linalg::spd_solve(info, sinv_g.transpose() * c);
  const Vector e = c - g * theta_gls;
  const double e0 = e.dot(linalg::spd_solve(model_.sigma, e).col(0));
  const Vector ginv_h = linalg::spd_solve(info, model_.h_deriv.transpose());
  const double sd_eff = std::sqrt(model_.h_deriv * ginv_h);
  const double radius2 = 0.25 * delta * delta - e0;
  Vector theta;
  if (radius2 >= 0.0) {
    theta = theta_gls + std::sqrt(radius2) * ginv_h / sd_eff;
  } else {
    const double shrink = delta / (2.0 * std::sqrt(e0));
    c *= shrink;
    theta = shrink * theta_gls;
  }

  ModulusSolution sol;
  sol.delta = delta;
  sol.omega = value;
  sol.omega_prime = sd;
  sol.theta_star = theta;
  sol.c_star = c;
  sol.k_delta = knot.k;
  sol.primal_omega = 2.0 * model_.h_deriv.dot(theta.transpose());
  return sol;
}

ModulusSolution half_modulus(const MomentModel& model, const MisspecSet& set, double delta) {
  return ModulusSolver(model, set).solve(delta);
}

double kappa_from_modulus(const std::function<std::pair<double, double>(double)>& omega, Alpha alpha) {
  const double a = alpha.value();
  const double z = norm_quantile(1.0 - a);

  // (1 - alpha) E[omega(2(z - Z)) | Z <= z] = int_0^inf omega(2u) phi(z - u) du
  const double upper = std::max(z + 10.0, 1.0);
  auto integrand = [&](double u) { return omega(2.0 * u).first * norm_pdf(z - u); };
  double err = 0.0;
  double numer = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, upper, 15, 1e-12, &err);
  // beyond `upper`, concavity bounds omega(2u) by its tangent at 2 * upper
  const auto [w_end, wp_end] = omega(2.0 * upper);
  const double tail_arg = upper - z;
  numer += w_end * norm_cdf(-tail_arg) + 2.0 * wp_end * (norm_pdf(tail_arg) - tail_arg * norm_cdf(-tail_arg));

  auto flci_length = [&](double delta) {
    const auto [w, wp] = omega(delta);
    if (!(wp > 0.0)) return w;
    const double bias = std::max(0.0, w / (2.0 * wp) - delta / 2.0);
    // far in the tail cv(b) = b + z_{1-alpha} to machine precision
    if (bias > 50.0) return w - delta * wp + 2.0 * z * wp;
    return 2.0 * critval::cv_alpha(bias, alpha) * wp;
  };
  constexpr int kGrid = 121;
  std::vector<double> logd(kGrid);
  std::vector<double> vals(kGrid);
  int best = 0;
  for (int i = 0; i < kGrid; ++i) {
    logd[i] = std::log(1e-3) + (std::log(1e3) - std::log(1e-3)) * i / (kGrid - 1);
    vals[i] = flci_length(std::exp(logd[i]));
    if (vals[i] < vals[best]) best = i;
  }
  double denom = vals[best];
  const double lo = logd[std::max(best - 1, 0)];
  const double hi = logd[std::min(best + 1, kGrid - 1)];
  std::uintmax_t iters = 200;
  const auto refined = boost::math::tools::brent_find_minima(
      [&](double ld) { return flci_length(std::exp(ld)); }, lo, hi, std::numeric_limits<double>::digits / 2, iters);
  denom = std::min(denom, refined.second);
  if (!(denom > 0.0)) throw Error(ErrorCode::SolverFailure, "", "nonpositive optimal FLCI length");
  return numer / denom;
}

double kappa_two_sided(const MomentModel& model, const MisspecSet& set, Alpha alpha) {
  const ModulusSolver solver(model, set);
  return kappa_from_modulus([&](double d) { return solver.omega(d); }, alpha);
}

double universal_lower_bound(Alpha alpha) {
  const double a = alpha.value();
  const double z1 = norm_quantile(1.0 - a);
  const double z2 = norm_quantile(1.0 - a / 2.0);
  const double zt = z1 - z2;
  return (z1 * (1.0 - a) - zt * norm_cdf(zt) + norm_pdf(z1) - norm_pdf(zt)) / z2;
}

double kappa_linear_subspace(Alpha alpha) {
  const double a = alpha.value();
  const double z1 = norm_quantile(1.0 - a);
  return ((1.0 - a) * z1 + norm_pdf(z1)) / norm_quantile(1.0 - a / 2.0);
}

double kappa_cressie_read(double m, Alpha alpha) {
  if (!(m >= 0.0)) throw Error(ErrorCode::InvalidInput, "m", "must be nonnegative");
  const double a = alpha.value();
  const double z1 = norm_quantile(1.0 - a);
  return ((1.0 - a) * (z1 + m) + norm_pdf(z1)) / critval::cv_alpha(m, alpha);
}

double kappa_one_sided(const MomentModel& model, const MisspecSet& set, Alpha alpha, double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw Error(ErrorCode::OutOfRange, "beta", "must lie in (0, 1)");
  const double d = norm_quantile(1.0 - alpha.value()) + norm_quantile(beta);
  if (!(d > 0.0)) throw Error(ErrorCode::OutOfRange, "beta", "z_{1-alpha} + z_beta must be positive");
  const ModulusSolver solver(model, set);
  const auto [w1, wp1] = solver.omega(d);
  const double w2 = solver.omega(2.0 * d).first;
  return w2 / (w1 + d * wp1);
}

Sensitivity gls_subspace_sensitivity(const MomentModel& model, const Matrix& b) {
  const Eigen::Index dg = model.dg();
  const Eigen::Index dt = model.dtheta();
  if (b.cols() > 0 && b.rows() != dg) throw Error(ErrorCode::DimensionMismatch, "b_mat", "row count differs from d_g");
  if (b.cols() > dg - dt) {
    throw Error(ErrorCode::TooManyInvalidMoments, "b_mat",
                "d_gamma = " + std::to_string(b.cols()) + " exceeds d_g - d_theta = " + std::to_string(dg - dt));
  }
  if (b.cols() == 0) return efficient_sensitivity(model);
  const Matrix bperp = linalg::orthogonal_complement(b);
  if (bperp.cols() != dg - b.cols()) throw Error(ErrorCode::RankDeficiency, "b_mat", "not of full column rank");
  const Matrix pg = bperp.transpose() * model.gamma;
  // rank judged on the scale of Gamma: pg can be pure rounding noise
  const Eigen::JacobiSVD<Matrix> svd(pg);
  if (svd.singularValues()(dt - 1) <= linalg::kRankTol * model.gamma.norm()) {
    throw Error(ErrorCode::RankDeficiency, "b_mat", "valid moments do not identify theta");
  }
  const Matrix inner = bperp.transpose() * model.sigma * bperp;
  const Matrix p = bperp * linalg::spd_solve(inner, bperp.transpose());
  const Matrix pgam = p * model.gamma;
  const Vector mu = linalg::spd_solve(model.gamma.transpose() * pgam, model.h_deriv.transpose());
  return Sensitivity{-pgam * mu};
}

EfficiencyReport report(const MomentModel& model, const MisspecSet& set, Alpha alpha, double beta) {
  EfficiencyReport out;
  out.alpha = alpha.value();
  out.beta = beta;
  out.kappa_two_sided = kappa_two_sided(model, set, alpha);
  out.kappa_one_sided = kappa_one_sided(model, set, alpha, beta);
  out.universal_lower = universal_lower_bound(alpha);
  return out;
}

}  // namespace momentguard::efficiency
