#pragma once

#include <optional>
#include <vector>

#include "momentguard/model.hpp"

namespace momentguard {

/// Linear IV sample for y = x'theta + eps with instruments z.
struct IVData {
  Vector y;
  Matrix x;
  Matrix z;
  std::vector<Eigen::Index> suspect;  ///< 0-based columns of z that may be invalid
  std::optional<Vector> column_scale; ///< optional multiplier per suspect column of B
};

enum class VarianceMode { Robust, Homoskedastic };

namespace iv {

/// Checks n > d_g >= d_theta and rank(z'x) = d_theta.
void validate(const IVData& data);

Vector tsls(const IVData& data);

/// Linear GMM with weighting w: [(x'z) W (z'x)]^{-1} (x'z) W (z'y).
Vector gmm_estimate(const IVData& data, const Matrix& w);

/// Reduced form at theta_init (2SLS when not given): g = z'(y - x theta)/n,
/// Gamma = -z'x/n, Sigma from the residuals at theta_init.
MomentModel build_model(const IVData& data, const RowVector& h_deriv, VarianceMode variance,
                        const std::optional<Vector>& theta_init = std::nullopt);

/// B = z' z_I / n with optional column scaling.
Matrix build_b(const IVData& data);

struct CollinearDrop {
  IVData data;
  std::vector<Eigen::Index> dropped;  ///< original 0-based indices removed
};

/// Greedily removes instruments that are linearly dependent on earlier ones.
CollinearDrop drop_collinear_instruments(const IVData& data);

/// k' z'y / n, which equals the one-step estimate for any initial estimator
/// when H = -k'Gamma.
double linear_one_step(const IVData& data, const RowVector& h_deriv, const Sensitivity& k);

}  // namespace iv
}  // namespace momentguard
