#pragma once

#include <Eigen/Dense>

namespace momentguard {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

namespace linalg {

// Relative tolerance used for numerical rank decisions.
inline constexpr double kRankTol = 1e-10;

/// Numerical rank from singular values, relative to the largest one.
Eigen::Index rank(const Matrix& a, double rel_tol = kRankTol);

/// Orthonormal basis of the orthogonal complement of col(a), taken from the
/// full SVD. Returns a rows(a) x (rows(a) - rank(a)) matrix.
Matrix orthogonal_complement(const Matrix& a);

/// Symmetric square root of a symmetric positive definite matrix.
Matrix sym_sqrt(const Matrix& s);

/// Symmetric inverse square root of a symmetric positive definite matrix.
Matrix sym_inv_sqrt(const Matrix& s);

/// Solve a * x = b for symmetric positive definite a.
Matrix spd_solve(const Matrix& a, const Matrix& b);

double max_abs(const Matrix& a);

}  // namespace linalg
}  // namespace momentguard
