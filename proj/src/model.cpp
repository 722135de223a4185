#include "momentguard/model.hpp"

#include <cmath>
#include <string>

#include "momentguard/error.hpp"

namespace momentguard {

namespace {

void require_finite(const Matrix& a, const char* field) {
  if (!a.allFinite()) throw Error(ErrorCode::InvalidInput, field, "non-finite entry");
}

std::string dims(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

MomentModel validate_model(const MomentModel& model) {
  const Eigen::Index dg = model.gamma.rows();
  const Eigen::Index dt = model.gamma.cols();
  if (dt < 1 || dg < dt) {
    throw Error(ErrorCode::DimensionMismatch, "gamma",
                "need d_g >= d_theta >= 1, got " + dims(dg, dt));
  }
  if (model.sigma.rows() != dg || model.sigma.cols() != dg) {
    throw Error(ErrorCode::DimensionMismatch, "sigma",
                "expected " + dims(dg, dg) + ", got " + dims(model.sigma.rows(), model.sigma.cols()));
  }
  if (model.h_deriv.size() != dt) {
    throw Error(ErrorCode::DimensionMismatch, "h_deriv",
                "expected length " + std::to_string(dt) + ", got " + std::to_string(model.h_deriv.size()));
  }
  if (model.g_init.size() != dg) {
    throw Error(ErrorCode::DimensionMismatch, "g_init",
                "expected length " + std::to_string(dg) + ", got " + std::to_string(model.g_init.size()));
  }
  if (model.n < 1) throw Error(ErrorCode::InvalidInput, "n", "sample size must be positive");
  require_finite(model.gamma, "gamma");
  require_finite(model.sigma, "sigma");
  require_finite(model.h_deriv, "h_deriv");
  require_finite(model.g_init, "g_init");
  if (!std::isfinite(model.h_init)) throw Error(ErrorCode::InvalidInput, "h_init", "non-finite");

  const double scale = linalg::max_abs(model.sigma);
  if (linalg::max_abs(model.sigma - model.sigma.transpose()) > 1e-10 * scale) {
    throw Error(ErrorCode::InvalidInput, "sigma", "not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(model.sigma, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  if (!(lmax > 0.0) || lmin < kSigmaFloor * lmax) {
    throw Error(ErrorCode::SingularSigma, "sigma",
                "smallest eigenvalue " + std::to_string(lmin) + " below floor");
  }
  if (linalg::rank(model.gamma) < dt) {
    throw Error(ErrorCode::RankDeficientGamma, "gamma", "not of full column rank");
  }
  if (model.h_deriv.cwiseAbs().maxCoeff() == 0.0) {
    throw Error(ErrorCode::ZeroH, "h_deriv", "derivative of h is zero");
  }
  return model;
}

MisspecSet validate_set(const MisspecSet& set, Eigen::Index dg) {
  if (set.b.rows() != dg) {
    throw Error(ErrorCode::DimensionMismatch, "b_mat",
                "expected " + std::to_string(dg) + " rows, got " + std::to_string(set.b.rows()));
  }
  if (set.b.cols() < 1) throw Error(ErrorCode::DimensionMismatch, "b_mat", "d_gamma must be >= 1");
  require_finite(set.b, "b_mat");
  if (linalg::rank(set.b) < set.b.cols()) {
    throw Error(ErrorCode::RankDeficiency, "b_mat", "not of full column rank");
  }
  if (!(set.m >= 0.0) || !std::isfinite(set.m)) {
    throw Error(ErrorCode::InvalidInput, "m", "must be finite and nonnegative");
  }
  return set;
}

double sensitivity_constraint_residual(const MomentModel& model, const Sensitivity& k) {
  if (k.k.size() != model.dg()) {
    throw Error(ErrorCode::DimensionMismatch, "k",
                "expected length " + std::to_string(model.dg()) + ", got " + std::to_string(k.k.size()));
  }
  const RowVector r = model.h_deriv + k.k.transpose() * model.gamma;
  return r.cwiseAbs().maxCoeff();
}

Sensitivity gmm_sensitivity(const MomentModel& model, const Matrix& w) {
  const Matrix gw = model.gamma.transpose() * w;  // d_theta x d_g
  const Matrix info = gw * model.gamma;
  Eigen::FullPivLU<Matrix> lu(info);
  if (!lu.isInvertible()) {
    throw Error(ErrorCode::SingularSystem, "", "Gamma' W Gamma is singular");
  }
  const RowVector kt = -model.h_deriv * lu.solve(gw);
  return Sensitivity{kt.transpose()};
}

Sensitivity efficient_sensitivity(const MomentModel& model) {
  const Matrix sinv_gamma = linalg::spd_solve(model.sigma, model.gamma);  // Sigma^{-1} Gamma
  const Matrix info = model.gamma.transpose() * sinv_gamma;
  const Vector mu = linalg::spd_solve(info, model.h_deriv.transpose());
  return Sensitivity{-sinv_gamma * mu};
}

}  // namespace momentguard
