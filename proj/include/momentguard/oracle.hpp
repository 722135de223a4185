#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "momentguard/critval.hpp"
#include "momentguard/model.hpp"

namespace momentguard {

/// Philox4x32-10 counter-based generator (Salmon et al., SC 2011). The output
/// block is a pure function of (counter, key), so every draw can be addressed
/// directly and reproduced on any platform.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block generate(Block counter, Key key);

  explicit Philox4x32(std::uint64_t seed);

  /// Two uniforms in (0, 1) with 53-bit resolution from the block at
  /// counter (index, stream).
  std::array<double, 2> uniforms(std::uint64_t index, std::uint64_t stream) const;

  /// Standard normal by inverse-cdf transform.
  std::array<double, 2> normals(std::uint64_t index, std::uint64_t stream) const;

 private:
  Key key_;
};

struct CoverageReport {
  std::int64_t replications = 0;
  double nominal = 0.0;
  double coverage = 0.0;
  double mc_stderr = 0.0;
  Vector worst_c;
  double wald_coverage = 0.0;  ///< same k, critical value z_{1-alpha/2}
  double mean_z = 0.0;         ///< mean of (k'Y - H theta) / sd
  double bias_sd = 0.0;        ///< k'c / sd for the simulated c
  double max_bias_sd = 0.0;    ///< M Bbar / sd
  double lambda_star = 0.0;
};

namespace oracle {

/// c in C(M) with k'c = M ||B'k||_{p'}.
Vector adversarial_c(const Sensitivity& k, const MisspecSet& set);

/// Coverage of the length-optimal two-sided CI for H theta in
/// Y = -Gamma theta + c + Sigma^{1/2} eps, eps ~ N(0, I).
CoverageReport mc_coverage(const MomentModel& model, const MisspecSet& set, Alpha alpha, const Vector& c,
                           std::int64_t reps, std::uint64_t seed,
                           const std::optional<Vector>& theta = std::nullopt);

/// Lattice lower bound on omega(delta), exact in theta for each lattice c.
double grid_modulus(const MomentModel& model, const MisspecSet& set, double delta, int grid_n);

/// Minimizer of k'Sigma k / 2 + lambda ||B'k||_1 s.t. H = -k'Gamma by
/// enumerating {+, -, 0} patterns of B'k and checking KKT feasibility.
Sensitivity kkt_sensitivity(const MomentModel& model, const Matrix& b, double lambda);

/// sup over the vertices of {||gamma||_inf <= M} of |k'B gamma|.
double vertex_worst_case_bias(const Sensitivity& k, const MisspecSet& set);

/// Plain bisection for Phi(c - b) - Phi(-c - b) = 1 - alpha.
double cv_alpha_oracle(double b, Alpha alpha);

}  // namespace oracle
}  // namespace momentguard
