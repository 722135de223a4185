#include "momentguard/iv.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "momentguard/error.hpp"

namespace momentguard::iv {

namespace {

double nobs(const IVData& data) { return static_cast<double>(data.y.size()); }

}  // namespace

void validate(const IVData& data) {
  const Eigen::Index n = data.y.size();
  if (data.x.rows() != n) throw Error(ErrorCode::DimensionMismatch, "x", "row count differs from length of y");
  if (data.z.rows() != n) throw Error(ErrorCode::DimensionMismatch, "z", "row count differs from length of y");
  const Eigen::Index dg = data.z.cols();
  const Eigen::Index dt = data.x.cols();
  if (dt < 1 || dg < dt) throw Error(ErrorCode::DimensionMismatch, "z", "need d_g >= d_theta >= 1");
  if (n <= dg) throw Error(ErrorCode::DimensionMismatch, "y", "need more observations than instruments");
  if (!data.y.allFinite() || !data.x.allFinite() || !data.z.allFinite()) {
    throw Error(ErrorCode::InvalidInput, "y", "data contain non-finite values");
  }
  if (linalg::rank(data.z.transpose() * data.x) < dt) {
    throw Error(ErrorCode::RankDeficiency, "z", "z'x is not of full column rank");
  }
  for (Eigen::Index j : data.suspect) {
    if (j < 0 || j >= dg) throw Error(ErrorCode::OutOfRange, "suspect", "index " + std::to_string(j + 1) + " out of range");
  }
}

Vector gmm_estimate(const IVData& data, const Matrix& w) {
  validate(data);
  const Matrix zx = data.z.transpose() * data.x;
  const Vector zy = data.z.transpose() * data.y;
  const Matrix xzw = zx.transpose() * w;
  Eigen::FullPivLU<Matrix> lu(xzw * zx);
  if (!lu.isInvertible()) throw Error(ErrorCode::RankDeficiency, "w", "x'z W z'x is singular");
  return lu.solve(xzw * zy);
}

Vector tsls(const IVData& data) {
  validate(data);
  const Matrix zz = data.z.transpose() * data.z;
  Eigen::LDLT<Matrix> ldlt(zz);
  if (ldlt.info() != Eigen::Success || linalg::rank(zz) < zz.rows()) {
    throw Error(ErrorCode::RankDeficiency, "z", "z'z is singular");
  }
  return gmm_estimate(data, ldlt.solve(Matrix::Identity(zz.rows(), zz.cols())));
}

MomentModel build_model(const IVData& data, const RowVector& h_deriv, VarianceMode variance,
                        const std::optional<Vector>& theta_init) {
  validate(data);
  if (h_deriv.size() != data.x.cols()) throw Error(ErrorCode::DimensionMismatch, "h_deriv", "length differs from d_theta");
  const Vector theta = theta_init ? *theta_init : tsls(data);
  if (theta.size() != data.x.cols()) throw Error(ErrorCode::DimensionMismatch, "theta_init", "length differs from d_theta");
  const double n = nobs(data);
  const Vector resid = data.y - data.x * theta;

  MomentModel model;
  model.gamma = -data.z.transpose() * data.x / n;
  model.g_init = data.z.transpose() * resid / n;
  if (variance == VarianceMode::Robust) {
    const Matrix zr = data.z.array().colwise() * resid.array();
    model.sigma = zr.transpose() * zr / n;
  } else {
    model.sigma = (resid.squaredNorm() / n) * (data.z.transpose() * data.z / n);
  }
  model.sigma = 0.5 * (model.sigma + model.sigma.transpose());
  model.h_deriv = h_deriv;
  model.h_init = h_deriv.dot(theta.transpose());
  model.n = data.y.size();
  return model;
}

Matrix build_b(const IVData& data) {
  if (data.suspect.empty()) throw Error(ErrorCode::EmptySuspectSet, "suspect", "no suspect instruments given");
  std::vector<Eigen::Index> idx = data.suspect;
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  for (Eigen::Index j : idx) {
    if (j < 0 || j >= data.z.cols()) throw Error(ErrorCode::OutOfRange, "suspect", "index " + std::to_string(j + 1) + " out of range");
  }
  if (data.column_scale && data.column_scale->size() != static_cast<Eigen::Index>(idx.size())) {
    throw Error(ErrorCode::DimensionMismatch, "column_scale", "one entry per suspect instrument required");
  }
  Matrix zi(data.z.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) zi.col(static_cast<Eigen::Index>(j)) = data.z.col(idx[j]);
  Matrix b = data.z.transpose() * zi / nobs(data);
  if (data.column_scale) b = b * data.column_scale->asDiagonal();
  return b;
}

CollinearDrop drop_collinear_instruments(const IVData& data) {
  const Eigen::Index dg = data.z.cols();
  std::vector<Eigen::Index> keep;
  CollinearDrop out;
  Matrix basis(data.z.rows(), 0);
  for (Eigen::Index j = 0; j < dg; ++j) {
    const Vector col = data.z.col(j);
    Vector resid = col;
    if (basis.cols() > 0) resid -= basis * (basis.transpose() * col);
    if (resid.norm() > 1e-10 * std::max(col.norm(), 1e-300)) {
      basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
      basis.col(basis.cols() - 1) = resid / resid.norm();
      keep.push_back(j);
    } else {
      out.dropped.push_back(j);
    }
  }
  out.data.y = data.y;
  out.data.x = data.x;
  out.data.z.resize(data.z.rows(), static_cast<Eigen::Index>(keep.size()));
  std::vector<Eigen::Index> remap(static_cast<std::size_t>(dg), -1);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.data.z.col(static_cast<Eigen::Index>(j)) = data.z.col(keep[j]);
    remap[static_cast<std::size_t>(keep[j])] = static_cast<Eigen::Index>(j);
  }
  std::vector<double> scale;
  for (std::size_t s = 0; s < data.suspect.size(); ++s) {
    const Eigen::Index orig = data.suspect[s];
    if (orig < 0 || orig >= dg || remap[static_cast<std::size_t>(orig)] < 0) continue;
    out.data.suspect.push_back(remap[static_cast<std::size_t>(orig)]);
    if (data.column_scale) scale.push_back((*data.column_scale)(static_cast<Eigen::Index>(s)));
  }
  if (data.column_scale) out.data.column_scale = Eigen::Map<const Vector>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  return out;
}

double linear_one_step(const IVData& data, const RowVector& h_deriv, const Sensitivity& k) {
  validate(data);
  if (k.k.size() != data.z.cols()) throw Error(ErrorCode::DimensionMismatch, "k", "length differs from d_g");
  const double n = nobs(data);
  const Matrix gamma = -data.z.transpose() * data.x / n;
  const RowVector resid = h_deriv + k.k.transpose() * gamma;
  const double scale = std::max(1.0, h_deriv.cwiseAbs().maxCoeff());
  if (resid.cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw Error(ErrorCode::ConstraintViolated, "k", "k does not satisfy H = -k'Gamma for this sample");
  }
  return k.k.dot(data.z.transpose() * data.y) / n;
}

}  // namespace momentguard::iv
