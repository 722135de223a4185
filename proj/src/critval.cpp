#include "momentguard/critval.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include <boost/math/distributions/non_central_chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>

#include "momentguard/error.hpp"

namespace momentguard {

Alpha::Alpha(double alpha) : alpha_(alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(ErrorCode::OutOfRange, "alpha", "must lie in (0, 1), got " + std::to_string(alpha));
  }
}

namespace critval {

namespace {

// Upper tail 1 - Phi(x) without cancellation.
double norm_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

struct RelTol {
  double tol;
  bool operator()(double a, double b) const {
    return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
  }
};

void check_chisq_args(int df, double ncp) {
  if (df < 1) throw Error(ErrorCode::OutOfRange, "df", "degrees of freedom must be positive");
  if (!(ncp >= 0.0) || !std::isfinite(ncp)) {
    throw Error(ErrorCode::OutOfRange, "ncp", "noncentrality must be finite and nonnegative");
  }
}

}  // namespace

double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorCode::OutOfRange, "p", "normal quantile needs 0 < p < 1");
  }
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double cv_alpha(double b, Alpha alpha) {
  if (!(b >= 0.0) || !std::isfinite(b)) {
    throw Error(ErrorCode::InvalidBias, "b", "bias must be finite and nonnegative");
  }
  const double a = alpha.value();
  const double z_two = norm_quantile(1.0 - a / 2.0);
  if (b == 0.0) return z_two;
  const double z_one = norm_quantile(1.0 - a);

  // P(|N(b,1)| > c) - alpha, decreasing in c.
  auto excess = [b, a](double c) { return norm_sf(c - b) + norm_cdf(-c - b) - a; };
  double lo = b + z_one - 1e-6;
  double hi = b + z_two + 1e-6;
  std::uintmax_t iters = 200;
  const auto root = boost::math::tools::toms748_solve(excess, lo, hi, excess(lo), excess(hi),
                                                      RelTol{1e-14}, iters);
  return 0.5 * (root.first + root.second);
}

double noncentral_chisq_cdf(double x, int df, double ncp) {
  check_chisq_args(df, ncp);
  if (x <= 0.0) return 0.0;
  if (!std::isfinite(x)) return 1.0;
  if (ncp == 0.0) return boost::math::gamma_p(0.5 * df, 0.5 * x);
  return boost::math::cdf(boost::math::non_central_chi_squared_distribution<double>(df, ncp), x);
}

double noncentral_chisq_quantile(double p, int df, double ncp) {
  check_chisq_args(df, ncp);
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorCode::OutOfRange, "p", "quantile level must lie in (0, 1)");
  }
  if (ncp == 0.0) return 2.0 * boost::math::gamma_p_inv(0.5 * df, p);
  return boost::math::quantile(boost::math::non_central_chi_squared_distribution<double>(df, ncp), p);
}

}  // namespace critval
}  // namespace momentguard
