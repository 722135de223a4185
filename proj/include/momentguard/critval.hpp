#pragma once

namespace momentguard {

/// Significance level, validated to lie in (0, 1).
class Alpha {
 public:
  explicit Alpha(double alpha);
  double value() const noexcept { return alpha_; }

 private:
  double alpha_;
};

namespace critval {

double norm_pdf(double x);
double norm_cdf(double x);
/// Inverse standard normal cdf; throws OutOfRange unless 0 < p < 1.
double norm_quantile(double p);

/// Bias-aware critical value: the 1 - alpha quantile of |N(b, 1)|, so that
/// Phi(c - b) - Phi(-c - b) = 1 - alpha. cv_alpha(0) is z_{1-alpha/2}.
double cv_alpha(double b, Alpha alpha);

/// P(X <= x) for X ~ noncentral chi-square(df, ncp).
double noncentral_chisq_cdf(double x, int df, double ncp);

/// Inverse of noncentral_chisq_cdf in x.
double noncentral_chisq_quantile(double p, int df, double ncp);

}  // namespace critval
}  // namespace momentguard
