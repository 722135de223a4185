#include "momentguard/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/tools/minima.hpp>

#include "momentguard/error.hpp"

namespace momentguard {

namespace {

double holder_dual_norm(const Vector& v, Norm p) {
  return p == Norm::L2 ? v.norm() : v.lpNorm<1>();
}

FrontierKnot make_knot(double lambda, Vector k, const Matrix& sigma, const Matrix& b, Norm p) {
  FrontierKnot knot;
  knot.lambda = lambda;
  knot.bbar = holder_dual_norm(b.transpose() * k, p);
  knot.var = k.dot(sigma * k);
  knot.k = Sensitivity{std::move(k)};
  return knot;
}

}  // namespace

SensitivityFrontier::SensitivityFrontier(MomentModel model, MisspecSet unit_set,
                                         std::vector<FrontierKnot> knots)
    : model_(std::move(model)), set_(std::move(unit_set)), knots_(std::move(knots)) {
  set_.m = 1.0;
  if (set_.p == Norm::L2) l2_ = std::make_shared<const sensitivity::L2Solver>(model_, set_.b);
}

FrontierKnot SensitivityFrontier::at(double lambda) const {
  if (knots_.empty()) throw Error(ErrorCode::EmptyFrontier, "", "frontier has no knots");
  if (set_.p == Norm::L2) {
    return make_knot(lambda, (*l2_)(lambda).k, model_.sigma, set_.b, set_.p);
  }
  if (lambda <= knots_.front().lambda) return knots_.front();
  for (std::size_t j = 0; j + 1 < knots_.size(); ++j) {
    const double lo = knots_[j].lambda;
    const double hi = knots_[j + 1].lambda;
    if (lambda <= hi) {
      const double t = hi > lo ? (lambda - lo) / (hi - lo) : 1.0;
      Vector k = (1.0 - t) * knots_[j].k.k + t * knots_[j + 1].k.k;
      return make_knot(lambda, std::move(k), model_.sigma, set_.b, set_.p);
    }
  }
  FrontierKnot last = knots_.back();
  last.lambda = lambda;
  return last;
}

namespace sensitivity {

double worst_case_bias(const Sensitivity& k, const MisspecSet& set) {
  if (k.k.size() != set.b.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "k",
                "sensitivity has length " + std::to_string(k.k.size()) + " but B has " +
                    std::to_string(set.b.rows()) + " rows");
  }
  return set.m * holder_dual_norm(set.b.transpose() * k.k, set.p);
}

L2Solver::L2Solver(const MomentModel& model, const Matrix& b) {
  if (b.rows() != model.dg()) throw Error(ErrorCode::DimensionMismatch, "b_mat", "row count differs from d_g");
  // Null-space form: k = k_p + N a with Gamma'N = 0, so H = -k'Gamma holds
  // exactly for every lambda regardless of the conditioning of W_lambda.
  const Matrix& g = model.gamma;
  Eigen::FullPivLU<Matrix> gtg(g.transpose() * g);
  if (!gtg.isInvertible()) throw Error(ErrorCode::SingularSystem, "gamma", "Gamma'Gamma is singular");
  kp_ = -g * gtg.solve(model.h_deriv.transpose());
  nmat_ = linalg::orthogonal_complement(g);
  nsn_ = nmat_.transpose() * model.sigma * nmat_;
  nb_ = nmat_.transpose() * b;
  nsk_ = nmat_.transpose() * (model.sigma * kp_);
  bk_ = b.transpose() * kp_;
}

Sensitivity L2Solver::operator()(double lambda) const {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidInput, "lambda", "must be nonnegative");
  if (nmat_.cols() == 0) return Sensitivity{kp_};
  Eigen::LDLT<Matrix> ldlt(nsn_ + lambda * nb_ * nb_.transpose());
  if (ldlt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularSystem, "", "Gamma' W_lambda Gamma is not invertible");
  }
  const Vector a = -ldlt.solve(nsk_ + lambda * nb_ * bk_);
  return Sensitivity{kp_ + nmat_ * a};
}

Sensitivity l2_sensitivity(const MomentModel& model, const Matrix& b, double lambda) {
  return L2Solver(model, b)(lambda);
}

namespace {

// Solution of the transformed KKT system on a fixed active set and sign
// pattern, together with its derivative in lambda.
struct PathState {
  Vector kt;
  Vector mu;
  Vector kt_dir;
  Vector mu_dir;
};

class LinfHomotopy {
 public:
  LinfHomotopy(const MomentModel& model, const Matrix& b, const Matrix& b_perp)
      : n_(model.dg()), dgamma_(b.cols()), dtheta_(model.dtheta()), h_(model.h_deriv.transpose()) {
    t_.resize(n_, n_);
    t_.topRows(n_ - dgamma_) = b_perp.transpose();
    t_.bottomRows(dgamma_) = (b.transpose() * b).ldlt().solve(b.transpose());
    sigma_t_ = t_ * model.sigma * t_.transpose();
    sigma_t_ = 0.5 * (sigma_t_ + sigma_t_.transpose());
    gamma_t_ = t_ * model.gamma;
  }

  bool penalized(Eigen::Index i) const { return i >= n_ - dgamma_; }
  const Matrix& t() const { return t_; }

  PathState solve(const std::vector<Eigen::Index>& act, const Vector& s, double lambda) const {
    const auto na = static_cast<Eigen::Index>(act.size());
    Matrix saa(na, na);
    Matrix ga(na, dtheta_);
    Vector sa(na);
    for (Eigen::Index r = 0; r < na; ++r) {
      for (Eigen::Index c = 0; c < na; ++c) saa(r, c) = sigma_t_(act[r], act[c]);
      ga.row(r) = gamma_t_.row(act[r]);
      sa(r) = s(act[r]);
    }
    Eigen::LLT<Matrix> llt(saa);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "sigma", "active block not PD");
    const Matrix x = llt.solve(ga);
    const Vector y = llt.solve(sa);
    Eigen::FullPivLU<Matrix> info(ga.transpose() * x);
    if (!info.isInvertible()) {
      throw Error(ErrorCode::RankDeficiency, "gamma", "active moments do not identify theta");
    }
    PathState st;
    st.mu = info.solve(h_ - ga.transpose() * y * lambda);
    st.mu_dir = -info.solve(ga.transpose() * y);
    st.kt = Vector::Zero(n_);
    st.kt_dir = Vector::Zero(n_);
    const Vector ka = -x * st.mu - y * lambda;
    const Vector kda = -x * st.mu_dir - y;
    // with d_theta active moments k is pinned down by the constraint alone;
    // the computed direction is pure rounding noise
    const bool pinned = na <= dtheta_;
    for (Eigen::Index r = 0; r < na; ++r) {
      st.kt(act[r]) = ka(r);
      st.kt_dir(act[r]) = pinned ? 0.0 : kda(r);
    }
    return st;
  }

  Vector residual(const Vector& kt, const Vector& mu) const { return sigma_t_ * kt + gamma_t_ * mu; }

  Eigen::Index n() const { return n_; }

 private:
  Eigen::Index n_;
  Eigen::Index dgamma_;
  Eigen::Index dtheta_;
  Vector h_;
  Matrix t_;
  Matrix sigma_t_;
  Matrix gamma_t_;
};

constexpr double kZeroRel = 1e-11;
constexpr double kTieRel = 1e-12;

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

SensitivityFrontier linf_path(const MomentModel& model, const Matrix& b, const Matrix& b_perp) {
  const Eigen::Index n = model.dg();
  if (b.rows() != n) throw Error(ErrorCode::DimensionMismatch, "b_mat", "row count differs from d_g");
  if (linalg::rank(b) < b.cols()) throw Error(ErrorCode::RankDeficiency, "b_mat", "not of full column rank");
  if (b_perp.rows() != n || b_perp.cols() != n - b.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "b_perp", "must be d_g x (d_g - d_gamma)");
  }
  if (b_perp.cols() > 0 && linalg::max_abs(b_perp.transpose() * b) > 1e-8 * std::max(1.0, linalg::max_abs(b))) {
    throw Error(ErrorCode::InvalidInput, "b_perp", "not orthogonal to col(B)");
  }

  const LinfHomotopy path(model, b, b_perp);
  const MisspecSet unit_set{b, Norm::Linf, 1.0};

  std::vector<bool> active(static_cast<std::size_t>(n), true);
  Vector s = Vector::Zero(n);
  auto active_list = [&] {
    std::vector<Eigen::Index> out;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (active[static_cast<std::size_t>(i)]) out.push_back(i);
    }
    return out;
  };

  double lambda = 0.0;
  PathState st = path.solve(active_list(), s, lambda);
  const double scale0 = std::max(st.kt.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!path.penalized(i)) continue;
    if (std::abs(st.kt(i)) < kZeroRel * scale0) {
      active[static_cast<std::size_t>(i)] = false;
    } else {
      s(i) = sign_of(st.kt(i));
    }
  }
  st = path.solve(active_list(), s, lambda);

  std::vector<FrontierKnot> knots;
  auto record = [&] {
    knots.push_back(make_knot(lambda, path.t().transpose() * st.kt, model.sigma, b, Norm::Linf));
  };
  record();

  Eigen::Index just_dropped = -1;
  const int max_iter = static_cast<int>(50 * n + 100);
  for (int iter = 0;; ++iter) {
    if (iter > max_iter) throw Error(ErrorCode::DegeneratePath, "", "homotopy did not terminate");
    const Vector r = path.residual(st.kt, st.mu);
    const Vector rho = path.residual(st.kt_dir, st.mu_dir);
    const double tiny = 1e-15 * std::max(1.0, lambda);

    double d1 = std::numeric_limits<double>::infinity();
    Eigen::Index i1 = -1;
    double d2 = std::numeric_limits<double>::infinity();
    Eigen::Index i2 = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!path.penalized(i)) continue;
      if (active[static_cast<std::size_t>(i)]) {
        // only coordinates heading toward zero can drop; this also keeps a
        // just-added index (zero up to rounding) from dropping straight back
        if (s(i) * st.kt_dir(i) >= 0.0) continue;
        const double d = std::abs(st.kt(i) / st.kt_dir(i));
        if (d > tiny && d < d1) {
          d1 = d;
          i1 = i;
        }
      } else {
        // r_i / lambda is monotone along a segment, so a just-dropped index
        // can only come back through the opposite boundary
        const double left = i == just_dropped ? sign_of(r(i)) : 0.0;
        // already on the boundary and moving outward: add immediately
        const double at_edge = std::abs(std::abs(r(i)) - lambda) <= 1e-10 * std::max(1.0, lambda);
        const double dir = r(i) != 0.0 ? sign_of(r(i)) : sign_of(rho(i));
        if (left == 0.0 && at_edge && dir * rho(i) > 1.0 + kTieRel) {
          if (0.0 < d2) {
            d2 = 0.0;
            i2 = i;
          }
          continue;
        }
        for (double branch : {1.0, -1.0}) {
          if (branch == left) continue;
          // r_i + d rho_i = branch (lambda + d)
          const double denom = rho(i) - branch;
          if (denom == 0.0) continue;
          const double d = (branch * lambda - r(i)) / denom;
          if (d > tiny && d < d2) {
            d2 = d;
            i2 = i;
          }
        }
      }
    }
    if (i1 < 0 && i2 < 0) break;

    const bool drop = i1 >= 0 && (i2 < 0 || d1 <= d2 * (1.0 + kTieRel) + tiny);
    const double step = drop ? d1 : d2;
    lambda += step;
    if (drop) {
      active[static_cast<std::size_t>(i1)] = false;
      s(i1) = 0.0;
      just_dropped = i1;
    } else {
      const Vector kt_new = st.kt + step * st.kt_dir;
      const Vector mu_new = st.mu + step * st.mu_dir;
      const Vector r_new = path.residual(kt_new, mu_new);
      active[static_cast<std::size_t>(i2)] = true;
      s(i2) = -sign_of(r_new(i2));
      just_dropped = -1;
    }
    st = path.solve(active_list(), s, lambda);

    // numerical-zero rule for simultaneous drops
    bool changed = true;
    while (changed) {
      changed = false;
      const double scale = std::max(st.kt.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!path.penalized(i) || !active[static_cast<std::size_t>(i)]) continue;
        // the index that just changed status sits at zero by construction
        if (i == (drop ? i1 : i2)) continue;
        if (std::abs(st.kt(i)) < kZeroRel * scale || sign_of(st.kt(i)) != s(i)) {
          if (!drop || std::abs(st.kt(i)) >= 1e-8 * scale) {
            throw Error(ErrorCode::DegeneratePath, "", "sign inconsistency at lambda = " + std::to_string(lambda));
          }
          active[static_cast<std::size_t>(i)] = false;
          s(i) = 0.0;
          changed = true;
        }
      }
      if (changed) st = path.solve(active_list(), s, lambda);
    }
    record();
  }

  return SensitivityFrontier(model, unit_set, std::move(knots));
}

SensitivityFrontier linf_path(const MomentModel& model, const Matrix& b) {
  return linf_path(model, b, linalg::orthogonal_complement(b));
}

std::vector<double> default_l2_grid(const MomentModel& model, const Matrix& b) {
  const double bb = (b * b.transpose()).trace();
  const double scale = bb > 0.0 ? model.sigma.trace() / bb : 1.0;
  std::vector<double> grid{0.0};
  constexpr int kPoints = 50;
  for (int i = 0; i < kPoints; ++i) {
    const double e = -6.0 + 12.0 * i / (kPoints - 1);
    grid.push_back(scale * std::pow(10.0, e));
  }
  return grid;
}

SensitivityFrontier frontier(const MomentModel& model, const MisspecSet& set,
                             const std::optional<std::vector<double>>& l2_grid) {
  const MisspecSet unit{set.b, set.p, 1.0};
  if (set.p == Norm::Linf) return linf_path(model, set.b);
  std::vector<double> grid = l2_grid ? *l2_grid : default_l2_grid(model, set.b);
  std::sort(grid.begin(), grid.end());
  const L2Solver solve(model, set.b);
  std::vector<FrontierKnot> knots;
  knots.reserve(grid.size());
  for (double lambda : grid) {
    knots.push_back(make_knot(lambda, solve(lambda).k, model.sigma, set.b, Norm::L2));
  }
  return SensitivityFrontier(model, unit, std::move(knots));
}

double criterion_value(const FrontierKnot& knot, double m, Alpha alpha, Criterion criterion) {
  const double bias = m * knot.bbar;
  if (criterion == Criterion::Mse) return bias * bias + knot.var;
  const double sd = std::sqrt(knot.var);
  return 2.0 * critval::cv_alpha(bias / sd, alpha) * sd;
}

std::pair<double, FrontierKnot> minimize_over_frontier(
    const SensitivityFrontier& frontier, const std::function<double(const FrontierKnot&)>& objective) {
  const auto& knots = frontier.knots();
  if (knots.empty()) throw Error(ErrorCode::EmptyFrontier, "", "frontier has no knots");

  // candidate lambdas in increasing order
  std::vector<double> cand;
  if (frontier.norm() == Norm::L2) {
    for (const auto& k : knots) cand.push_back(k.lambda);
  } else {
    constexpr int kSub = 20;
    for (std::size_t j = 0; j < knots.size(); ++j) {
      cand.push_back(knots[j].lambda);
      if (j + 1 < knots.size()) {
        const double lo = knots[j].lambda;
        const double hi = knots[j + 1].lambda;
        for (int i = 1; i <= kSub; ++i) cand.push_back(lo + (hi - lo) * i / (kSub + 1));
      }
    }
  }

  std::vector<double> values(cand.size());
  std::size_t best = 0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const FrontierKnot pt = (frontier.norm() == Norm::L2) ? knots[i] : frontier.at(cand[i]);
    values[i] = objective(pt);
    if (values[i] < values[best]) best = i;
  }
  double best_lambda = cand[best];
  double best_value = values[best];
  if (cand.size() == 1) return {best_lambda, frontier.at(best_lambda)};

  const double lo = cand[best == 0 ? 0 : best - 1];
  const double hi = cand[std::min(best + 1, cand.size() - 1)];
  if (hi > lo) {
    const int bits = std::numeric_limits<double>::digits / 2;
    std::uintmax_t iters = 200;
    const bool use_log = frontier.norm() == Norm::L2 && lo > 0.0;
    if (use_log) {
      auto f = [&](double u) { return objective(frontier.at(std::exp(u))); };
      const auto r = boost::math::tools::brent_find_minima(f, std::log(lo), std::log(hi), bits, iters);
      if (r.second < best_value) {
        best_value = r.second;
        best_lambda = std::exp(r.first);
      }
    } else {
      auto f = [&](double l) { return objective(frontier.at(l)); };
      const auto r = boost::math::tools::brent_find_minima(f, lo, hi, bits, iters);
      if (r.second < best_value) {
        best_value = r.second;
        best_lambda = r.first;
      }
    }
  }
  if (best_lambda == cand[best] && frontier.norm() == Norm::L2) return {best_lambda, knots[best]};
  return {best_lambda, frontier.at(best_lambda)};
}

LambdaChoice select_lambda(const SensitivityFrontier& frontier, double m, Alpha alpha, Criterion criterion) {
  if (frontier.empty()) throw Error(ErrorCode::EmptyFrontier, "", "frontier has no knots");
  if (!(m >= 0.0)) throw Error(ErrorCode::InvalidInput, "m", "must be nonnegative");
  LambdaChoice out;
  out.criterion = criterion;
  out.m = m;
  if (m == 0.0) {
    out.knot = frontier.knots().front();
    out.lambda_star = out.knot.lambda;
    out.value = criterion_value(out.knot, m, alpha, criterion);
    return out;
  }
  auto [lambda, knot] = minimize_over_frontier(
      frontier, [&](const FrontierKnot& k) { return criterion_value(k, m, alpha, criterion); });
  out.lambda_star = lambda;
  out.knot = std::move(knot);
  out.value = criterion_value(out.knot, m, alpha, criterion);
  return out;
}

LambdaChoice select_lambda_one_sided(const SensitivityFrontier& frontier, double m, Alpha alpha, double beta) {
  if (frontier.empty()) throw Error(ErrorCode::EmptyFrontier, "", "frontier has no knots");
  if (!(beta > 0.0 && beta < 1.0)) throw Error(ErrorCode::OutOfRange, "beta", "must lie in (0, 1)");
  const double zsum = critval::norm_quantile(1.0 - alpha.value()) + critval::norm_quantile(beta);
  auto objective = [&](const FrontierKnot& k) { return m * k.bbar + zsum * std::sqrt(k.var); };
  LambdaChoice out;
  out.criterion = Criterion::CiLength;
  out.m = m;
  if (m == 0.0) {
    out.knot = frontier.knots().front();
  } else {
    auto [lambda, knot] = minimize_over_frontier(frontier, objective);
    out.knot = std::move(knot);
    out.knot.lambda = lambda;
  }
  out.lambda_star = out.knot.lambda;
  out.value = objective(out.knot);
  return out;
}

}  // namespace sensitivity
}  // namespace momentguard
