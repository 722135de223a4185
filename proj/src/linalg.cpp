#include "momentguard/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "momentguard/error.hpp"

namespace momentguard::linalg {

Eigen::Index rank(const Matrix& a, double rel_tol) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > rel_tol * sv(0)) ++r;
  }
  return r;
}

Matrix orthogonal_complement(const Matrix& a) {
  const Eigen::Index n = a.rows();
  if (a.cols() == 0) return Matrix::Identity(n, n);
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullU);
  const Eigen::Index r = rank(a);
  return svd.matrixU().rightCols(n - r);
}

namespace {

Matrix sym_power(const Matrix& s, double power) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularSystem, "", "eigendecomposition failed");
  }
  const Vector& ev = es.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() <= 0.0) {
    throw Error(ErrorCode::SingularSystem, "", "matrix is not positive definite");
  }
  const Vector scaled = ev.array().pow(power);
  return es.eigenvectors() * scaled.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Matrix sym_sqrt(const Matrix& s) { return sym_power(s, 0.5); }

Matrix sym_inv_sqrt(const Matrix& s) { return sym_power(s, -0.5); }

Matrix spd_solve(const Matrix& a, const Matrix& b) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularSystem, "", "matrix is not positive definite");
  }
  return llt.solve(b);
}

double max_abs(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

}  // namespace momentguard::linalg
