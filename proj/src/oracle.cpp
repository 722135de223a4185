#include "momentguard/oracle.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "momentguard/error.hpp"
#include "momentguard/sensitivity.hpp"

namespace momentguard {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace

Philox4x32::Block Philox4x32::generate(Block ctr, Key key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

Philox4x32::Philox4x32(std::uint64_t seed)
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

std::array<double, 2> Philox4x32::uniforms(std::uint64_t index, std::uint64_t stream) const {
  const Block out = generate({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                              static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)},
                             key_);
  return {to_unit(out[0], out[1]), to_unit(out[2], out[3])};
}

std::array<double, 2> Philox4x32::normals(std::uint64_t index, std::uint64_t stream) const {
  static const boost::math::normal_distribution<double> std_normal;
  const auto u = uniforms(index, stream);
  return {boost::math::quantile(std_normal, u[0]), boost::math::quantile(std_normal, u[1])};
}

namespace oracle {

namespace {

double phi_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

void check_membership(const Vector& c, const MisspecSet& set) {
  if (c.size() != set.b.rows()) throw Error(ErrorCode::DimensionMismatch, "c", "length differs from d_g");
  const Vector gamma = set.b.colPivHouseholderQr().solve(c);
  const double resid = (set.b * gamma - c).norm();
  if (resid > 1e-9 * (1.0 + c.norm())) throw Error(ErrorCode::CNotInSet, "c", "c is not in col(B)");
  const double size = set.p == Norm::L2 ? gamma.norm() : gamma.cwiseAbs().maxCoeff();
  if (size > set.m + 1e-9) {
    throw Error(ErrorCode::CNotInSet, "c", "||gamma||_p = " + std::to_string(size) + " exceeds M");
  }
}

}  // namespace

Vector adversarial_c(const Sensitivity& k, const MisspecSet& set) {
  const Vector u = set.b.transpose() * k.k;
  Vector gamma(u.size());
  if (set.p == Norm::Linf) {
    for (Eigen::Index i = 0; i < u.size(); ++i) gamma(i) = u(i) < 0.0 ? -set.m : set.m;
  } else if (u.norm() > 0.0) {
    gamma = set.m * u / u.norm();
  } else {
    gamma = Vector::Zero(u.size());
    gamma(0) = set.m;
  }
  return set.b * gamma;
}

CoverageReport mc_coverage(const MomentModel& model, const MisspecSet& set, Alpha alpha, const Vector& c,
                           std::int64_t reps, std::uint64_t seed, const std::optional<Vector>& theta) {
  if (reps < 1000) throw Error(ErrorCode::InvalidInput, "reps", "at least 1000 replications required");
  check_membership(c, set);
  const Eigen::Index dg = model.dg();
  const Vector th = theta ? *theta : Vector::Zero(model.dtheta());
  if (th.size() != model.dtheta()) throw Error(ErrorCode::DimensionMismatch, "theta", "length differs from d_theta");

  const SensitivityFrontier path = sensitivity::frontier(model, set);
  const LambdaChoice choice = sensitivity::select_lambda(path, set.m, alpha, Criterion::CiLength);
  const Vector& k = choice.knot.k.k;
  const double sd = std::sqrt(k.dot(model.sigma * k));
  const double bias_sd = set.m * choice.knot.bbar / sd;
  const double half = critval::cv_alpha(bias_sd, alpha) * sd;
  const double wald_half = critval::norm_quantile(1.0 - alpha.value() / 2.0) * sd;

  // k'Y - H theta = k'(c - Gamma theta) - H theta + (Sigma^{1/2} k)' eps
  const Vector root_k = linalg::sym_sqrt(model.sigma) * k;
  const double target = model.h_deriv.dot(th.transpose());
  const double center = k.dot(c - model.gamma * th) - target;

  const Philox4x32 rng(seed);
  std::int64_t covered = 0;
  std::int64_t wald_covered = 0;
  double zsum = 0.0;
  for (std::int64_t r = 0; r < reps; ++r) {
    double noise = 0.0;
    for (Eigen::Index j = 0; j < dg; j += 2) {
      const auto z = rng.normals(static_cast<std::uint64_t>(j / 2), static_cast<std::uint64_t>(r));
      noise += root_k(j) * z[0];
      if (j + 1 < dg) noise += root_k(j + 1) * z[1];
    }
    const double err = center + noise;
    if (std::abs(err) <= half) ++covered;
    if (std::abs(err) <= wald_half) ++wald_covered;
    zsum += err / sd;
  }

  CoverageReport out;
  out.replications = reps;
  out.nominal = 1.0 - alpha.value();
  out.coverage = static_cast<double>(covered) / static_cast<double>(reps);
  out.mc_stderr = std::sqrt(out.coverage * (1.0 - out.coverage) / static_cast<double>(reps));
  out.worst_c = c;
  out.wald_coverage = static_cast<double>(wald_covered) / static_cast<double>(reps);
  out.mean_z = zsum / static_cast<double>(reps);
  out.bias_sd = k.dot(c) / sd;
  out.max_bias_sd = bias_sd;
  out.lambda_star = choice.lambda_star;
  return out;
}

double grid_modulus(const MomentModel& model, const MisspecSet& set, double delta, int grid_n) {
  if (model.dtheta() > 2 || set.b.cols() > 2) {
    throw Error(ErrorCode::DimensionTooLarge, "b_mat", "grid oracle supports d_theta <= 2 and d_gamma <= 2");
  }
  if (grid_n < 2) throw Error(ErrorCode::InvalidInput, "grid_n", "need at least 2 points per axis");
  // For fixed c the best theta is the GLS fit plus a step of the remaining
  // radius along G^{-1}H', so H theta = a'c + sqrt(delta^2/4 - c'Pc) * s.
  const Matrix& g = model.gamma;
  const Eigen::LLT<Matrix> sig(model.sigma);
  const Matrix sg = sig.solve(g);
  const Matrix info = g.transpose() * sg;
  const Eigen::LLT<Matrix> inf(info);
  const Vector ginv_h = inf.solve(model.h_deriv.transpose());
  const double s = std::sqrt(model.h_deriv.dot(ginv_h.transpose()));
  const Vector a = sg * ginv_h;
  const Matrix p = sig.solve(Matrix::Identity(g.rows(), g.rows())) - sg * inf.solve(sg.transpose());
  const Vector ab = set.b.transpose() * a;
  const Matrix pb = set.b.transpose() * p * set.b;
  const double r2 = 0.25 * delta * delta;

  double best = -std::numeric_limits<double>::infinity();
  auto visit = [&](const Vector& gamma) {
    const double e0 = gamma.dot(pb * gamma);
    if (e0 > r2) return;
    best = std::max(best, ab.dot(gamma) + std::sqrt(r2 - e0) * s);
  };

  const double m = set.m;
  const Eigen::Index dgam = set.b.cols();
  Vector gamma(dgam);
  if (dgam == 1) {
    for (int i = 0; i < grid_n; ++i) {
      gamma(0) = -m + 2.0 * m * i / (grid_n - 1);
      visit(gamma);
    }
  } else if (set.p == Norm::Linf) {
    for (int i = 0; i < grid_n; ++i) {
      for (int j = 0; j < grid_n; ++j) {
        gamma << -m + 2.0 * m * i / (grid_n - 1), -m + 2.0 * m * j / (grid_n - 1);
        visit(gamma);
      }
    }
  } else {
    for (int i = 0; i < grid_n; ++i) {
      const double rad = m * i / (grid_n - 1);
      for (int j = 0; j < 4 * grid_n; ++j) {
        const double ang = 2.0 * std::numbers::pi * j / (4 * grid_n);
        gamma << rad * std::cos(ang), rad * std::sin(ang);
        visit(gamma);
      }
    }
  }
  return 2.0 * best;
}

Sensitivity kkt_sensitivity(const MomentModel& model, const Matrix& b, double lambda) {
  const Eigen::Index dg = model.dg();
  const Eigen::Index dt = model.dtheta();
  const Eigen::Index dgam = b.cols();
  if (dgam > 12) throw Error(ErrorCode::DimensionTooLarge, "b_mat", "KKT enumeration supports d_gamma <= 12");
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidInput, "lambda", "must be nonnegative");

  std::int64_t patterns = 1;
  for (Eigen::Index j = 0; j < dgam; ++j) patterns *= 3;

  double best_value = std::numeric_limits<double>::infinity();
  Vector best_k;
  std::vector<int> state(static_cast<std::size_t>(dgam));
  for (std::int64_t code = 0; code < patterns; ++code) {
    std::int64_t rest = code;
    std::vector<Eigen::Index> zero;
    Vector sgn = Vector::Zero(dgam);
    for (Eigen::Index j = 0; j < dgam; ++j) {
      const int st = static_cast<int>(rest % 3);
      rest /= 3;
      state[static_cast<std::size_t>(j)] = st;
      if (st == 0) {
        zero.push_back(j);
      } else {
        sgn(j) = st == 1 ? 1.0 : -1.0;
      }
    }
    const auto nz = static_cast<Eigen::Index>(zero.size());
    // [Sigma Gamma Bz; Gamma' 0 0; Bz' 0 0] [k; mu; nu] = [-lambda B s; -H'; 0]
    const Eigen::Index dim = dg + dt + nz;
    Matrix kkt = Matrix::Zero(dim, dim);
    Vector rhs = Vector::Zero(dim);
    kkt.topLeftCorner(dg, dg) = model.sigma;
    kkt.block(0, dg, dg, dt) = model.gamma;
    kkt.block(dg, 0, dt, dg) = model.gamma.transpose();
    for (Eigen::Index z = 0; z < nz; ++z) {
      kkt.block(0, dg + dt + z, dg, 1) = b.col(zero[static_cast<std::size_t>(z)]);
      kkt.block(dg + dt + z, 0, 1, dg) = b.col(zero[static_cast<std::size_t>(z)]).transpose();
    }
    rhs.head(dg) = -lambda * b * sgn;
    rhs.segment(dg, dt) = -model.h_deriv.transpose();
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Vector sol = lu.solve(rhs);
    const Vector k = sol.head(dg);
    const Vector u = b.transpose() * k;
    const double tol = 1e-10 * std::max(1.0, k.norm() * b.norm());
    bool ok = true;
    for (Eigen::Index j = 0; j < dgam && ok; ++j) {
      if (sgn(j) != 0.0) ok = sgn(j) * u(j) >= -tol;
    }
    for (Eigen::Index z = 0; z < nz && ok; ++z) {
      ok = std::abs(sol(dg + dt + z)) <= lambda * (1.0 + 1e-9) + 1e-12;
    }
    if (!ok) continue;
    const double value = 0.5 * k.dot(model.sigma * k) + lambda * u.lpNorm<1>();
    if (value < best_value) {
      best_value = value;
      best_k = k;
    }
  }
  if (best_k.size() == 0) throw Error(ErrorCode::NoFeasibleKKTPoint, "", "no sign pattern satisfies the KKT conditions");
  return Sensitivity{best_k};
}

double vertex_worst_case_bias(const Sensitivity& k, const MisspecSet& set) {
  const Eigen::Index d = set.b.cols();
  if (d > 12) throw Error(ErrorCode::DimensionTooLarge, "b_mat", "vertex enumeration supports d_gamma <= 12");
  const Vector u = set.b.transpose() * k.k;
  double best = 0.0;
  for (std::uint32_t mask = 0; mask < (1u << d); ++mask) {
    double v = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) v += ((mask >> j) & 1u) ? u(j) : -u(j);
    best = std::max(best, std::abs(v));
  }
  return set.m * best;
}

double cv_alpha_oracle(double b, Alpha alpha) {
  const double target = 1.0 - alpha.value();
  double lo = 0.0;
  double hi = std::abs(b) + 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cover = phi_cdf(mid - b) - phi_cdf(-mid - b);
    if (cover < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace oracle
}  // namespace momentguard
