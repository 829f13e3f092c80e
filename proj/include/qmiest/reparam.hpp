#pragma once

// Bounded primal QMI for a single regression sample Y = theta X + W.
//
// The consistency set of one sample, {theta : (theta X - Y)' Q (theta X - Y) <= R},
// is unbounded whenever X has fewer columns than rows. With G = X^+ and
// G0 = I - X G it is enclosed (inside a prior) by the ellipsoid
//
//   Sigma_hat = { theta : [theta - theta_hat; I]' diag(-Q, S) [..] >= 0 },
//   theta_hat = Y G + theta_bar G0,
//   S         = G' (R + R_hat) G + G0' Q_hat G0,
//
// provided R <= gamma^2 R_hat and Q_hat dominates (1 + gamma^2) Q over the
// prior in the directions of G0. solve_qhat finds the smallest such Q_hat by
// an S-procedure SDP over the prior's QMIs.

#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "qmiest/errors.hpp"
#include "qmiest/matops.hpp"
#include "qmiest/qmi.hpp"
#include "qmiest/sdp.hpp"

namespace qmiest {

/// One sample of Y = theta X + W with (W; I)' diag(-Q, R) (W; I) >= 0.
struct RegressionSample {
  Matrix x;  // n x m regressor
  Matrix y;  // p x m regressand
  Matrix q;  // p x p
  Matrix r;  // m x m

  [[nodiscard]] Eigen::Index n() const { return x.rows(); }
  [[nodiscard]] Eigen::Index m() const { return x.cols(); }
  [[nodiscard]] Eigen::Index p() const { return y.rows(); }

  void validate() const {
    require(y.cols() == x.cols(), Errc::DimensionMismatch,
            "regressand " + shape_of(y) + " and regressor " + shape_of(x) + " disagree");
    require(q.rows() == y.rows() && q.cols() == y.rows(), Errc::DimensionMismatch,
            "Q must be p x p");
    require(r.rows() == x.cols() && r.cols() == x.cols(), Errc::DimensionMismatch,
            "R must be m x m");
    require(is_psd(q, 1e-12 * std::max(1.0, max_abs(q))), Errc::NotPsd, "Q is not PSD");
    require(is_psd(r, 1e-12 * std::max(1.0, max_abs(r))), Errc::NotPsd, "R is not PSD");
  }

  /// True when the residual W = Y - theta X satisfies the disturbance bound.
  [[nodiscard]] bool consistent(const Matrix& theta, double tol = 0.0) const {
    const Matrix w = y - theta * x;
    return is_psd(r - w.transpose() * q * w, tol);
  }
};

enum class QhatObjective { Trace, LogDet };

/// How epsilon sets R_hat. Both keep R <= gamma^2 R_hat with
/// gamma^2 = 1 / ((1 + eps)^2 - 1).
///   Inverse: R_hat = R / ((1 + eps)^2 - 1), so R + R_hat = (1 + eps)^2 R_hat.
///   Direct:  R_hat = ((1 + eps)^2 - 1) R,   so R + R_hat = (1 + eps)^2 R
///            and R = gamma^2 R_hat holds with equality.
enum class RhatScaling { Inverse, Direct };

struct ReparamConfig {
  double epsilon = 0.1;
  std::optional<Matrix> theta_bar;  // empty: center of the first bounded prior, else 0
  QhatObjective objective = QhatObjective::Trace;
  RhatScaling scaling = RhatScaling::Inverse;
};

struct RhatGamma {
  Matrix rhat;
  double gamma_sq = 0.0;
};

inline RhatGamma rhat_gamma_from_eps(const Matrix& r, double epsilon,
                                     RhatScaling scaling = RhatScaling::Inverse) {
  require(epsilon > 0.0 && std::isfinite(epsilon), Errc::NonPositiveEpsilon,
          "epsilon must be positive, got " + std::to_string(epsilon));
  const Matrix rs = symmetrized(r, "R");
  require(rs.size() == 0 || is_pd(rs), Errc::NotPositiveDefinite,
          "R must be positive definite for R_hat > 0");
  const double c = (1.0 + epsilon) * (1.0 + epsilon) - 1.0;
  const double factor = scaling == RhatScaling::Inverse ? 1.0 / c : c;
  return {factor * rs, 1.0 / c};
}

struct QhatSolution {
  Matrix qhat;
  std::vector<double> lambdas;
  sdp::SdpSolution report;
};

namespace detail {

inline Matrix prior_free_center(std::span<const Qmi> priors, Eigen::Index p, Eigen::Index n) {
  for (const auto& prior : priors) {
    if (auto c = bounded_center(prior)) return *c;
  }
  return Matrix::Zero(p, n);
}

// Q_hat constraint matrix with the weight (1 + gamma^2) Q, minus sum lambda_i Pi_i.
inline sdp::AffineMatrix qhat_lmi(const sdp::AffineMatrix& qhat,
                                  const std::vector<int>& lambda_vars,
                                  std::span<const Qmi> priors, const Matrix& q,
                                  double gamma_sq, const Matrix& theta_bar) {
  const Eigen::Index p = q.rows();
  const Eigen::Index n = theta_bar.cols();
  const Matrix qq = (1.0 + gamma_sq) * q;
  Matrix fixed(p + n, p + n);
  fixed.topLeftCorner(p, p) = -qq;
  fixed.topRightCorner(p, n) = qq * theta_bar;
  fixed.bottomLeftCorner(n, p) = theta_bar.transpose() * qq;
  fixed.bottomRightCorner(n, n) = -theta_bar.transpose() * qq * theta_bar;
  sdp::AffineMatrix expr(fixed);
  expr += sdp::AffineMatrix::embed(qhat, p + n, p + n, p, p);
  for (std::size_t i = 0; i < priors.size(); ++i) {
    expr -= sdp::AffineMatrix::variable_entry(p + n, p + n, lambda_vars[i], priors[i].matrix());
  }
  return expr;
}

inline Matrix qhat_lhs(const Matrix& qhat, const std::vector<double>& lambdas,
                       std::span<const Qmi> priors, const Matrix& q, double gamma_sq,
                       const Matrix& theta_bar) {
  const Eigen::Index p = q.rows();
  const Eigen::Index n = theta_bar.cols();
  Matrix t(p + n, p + n);
  t << identity(p), -theta_bar, zeros(n, p), identity(n);
  Matrix lhs = t.transpose() * block_diag(-(1.0 + gamma_sq) * q, qhat) * t;
  for (std::size_t i = 0; i < priors.size(); ++i) lhs -= lambdas[i] * priors[i].matrix();
  return 0.5 * (lhs + lhs.transpose());
}

// Interior-point output sits on the boundary of the cone and may violate it
// by the solver tolerance. Inflate the multipliers a little and shift Q_hat
// by the Schur-complement deficit so that the returned pair is feasible.
inline void repair_qhat(Matrix& qhat, std::vector<double>& lambdas, std::span<const Qmi> priors,
                        const Matrix& q, double gamma_sq, const Matrix& theta_bar) {
  const Eigen::Index p = q.rows();
  const Eigen::Index n = theta_bar.cols();
  const Vector qev = sym_eigenvalues(qhat);
  if (qev.size() > 0 && qev.minCoeff() < 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(qhat);
    qhat = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() *
           es.eigenvectors().transpose();
    qhat = 0.5 * (qhat + qhat.transpose());
  }
  if (min_eigenvalue(qhat_lhs(qhat, lambdas, priors, q, gamma_sq, theta_bar)) >= 0.0) return;
  const std::vector<double> base = lambdas;
  for (double bump = 1e-9; bump <= 1e-1; bump *= 10.0) {
    for (std::size_t i = 0; i < lambdas.size(); ++i) lambdas[i] = base[i] * (1.0 + bump);
    const Matrix lhs = qhat_lhs(qhat, lambdas, priors, q, gamma_sq, theta_bar);
    const Matrix l11 = lhs.topLeftCorner(p, p);
    const double scale = std::max(1.0, max_abs(lhs));
    if (p > 0 && min_eigenvalue(l11) <= 1e-12 * scale) continue;
    const Matrix l12 = lhs.topRightCorner(p, n);
    const Matrix schur = lhs.bottomRightCorner(n, n) - l12.transpose() * l11.ldlt().solve(l12);
    const double shift = std::max(0.0, -min_eigenvalue(schur)) * (1.0 + 1e-9) + 1e-14 * scale;
    const Matrix candidate = qhat + shift * identity(n);
    if (min_eigenvalue(qhat_lhs(candidate, lambdas, priors, q, gamma_sq, theta_bar)) >= 0.0) {
      qhat = candidate;
      return;
    }
  }
  lambdas = base;
  fail(Errc::SolverFailure, "Q_hat solution could not be made strictly feasible");
}

}  // namespace detail

/// Minimal Q_hat (trace, or log-det by reweighted trace) such that
///   [[-(1+g^2)Q, (1+g^2)Q tb], [., Q_hat - (1+g^2) tb' Q tb]] - sum l_i Pi_i >= 0.
inline QhatSolution solve_qhat(std::span<const Qmi> priors, const Matrix& q, double gamma_sq,
                               const Matrix& theta_bar,
                               QhatObjective objective = QhatObjective::Trace,
                               const sdp::Settings& settings = {}) {
  require(!priors.empty(), Errc::InvalidArgument, "at least one prior QMI is required");
  const Eigen::Index p = q.rows();
  const Eigen::Index n = theta_bar.cols();
  require(theta_bar.rows() == p, Errc::DimensionMismatch, "theta_bar rows must match Q");
  for (const auto& prior : priors) {
    require(prior.orientation() == Orientation::Primal && prior.p() == p && prior.n() == n,
            Errc::DimensionMismatch, "priors must be primal " + std::to_string(p) + "x" +
                                         std::to_string(n) + " QMIs");
  }
  require(gamma_sq >= 0.0, Errc::InvalidArgument, "gamma^2 must be nonnegative");
  const Matrix qs = symmetrized(q, "Q");

  auto solve_weighted = [&](const Matrix& weight) {
    sdp::LmiProblem problem;
    const auto qhat = problem.add_symmetric("Qhat", n, true);
    std::vector<int> lambdas;
    for (std::size_t i = 0; i < priors.size(); ++i) {
      lambdas.push_back(problem.add_scalar("lambda" + std::to_string(i), 0.0));
    }
    problem.add_lmi("qhat_dominance",
                    detail::qhat_lmi(qhat, lambdas, priors, qs, gamma_sq, theta_bar));
    problem.minimize_trace(qhat, weight);
    sdp::SdpSolution sol = sdp::solve(problem, settings);
    if (sol.status == sdp::Status::Infeasible || sol.status == sdp::Status::Unbounded) {
      fail(Errc::Infeasible, "no Q_hat dominates the prior (prior unbounded where Q penalizes)");
    }
    require(sol.optimal() || sol.max_constraint_violation < 1e-3, Errc::SolverFailure,
            "Q_hat SDP ended with " + sol.solver_status + ", violation " +
                std::to_string(sol.max_constraint_violation));
    QhatSolution out;
    out.qhat = sol.value(qhat);
    out.qhat = 0.5 * (out.qhat + out.qhat.transpose());
    for (int v : lambdas) out.lambdas.push_back(std::max(0.0, sol.value(v)));
    detail::repair_qhat(out.qhat, out.lambdas, priors, qs, gamma_sq, theta_bar);
    out.report = std::move(sol);
    return out;
  };

  QhatSolution best = solve_weighted(identity(n));
  if (objective == QhatObjective::LogDet) {
    // log det is concave: minimize its linearization tr(Q_k^{-1} Q_hat) a few times.
    for (int it = 0; it < 5; ++it) {
      const double reg = 1e-6 * std::max(1.0, best.qhat.trace() / std::max<Eigen::Index>(1, n));
      const Matrix w = (best.qhat + reg * identity(n)).ldlt().solve(identity(n));
      best = solve_weighted(0.5 * (w + w.transpose()) / std::max(1.0, max_abs(w)));
    }
  }
  return best;
}

/// Prior-aware enclosure of one sample: returns from_center_shape(Q, S, theta_hat).
inline Qmi reparameterize_sample(const RegressionSample& s, const Matrix& qhat,
                                 const Matrix& rhat, const Matrix& theta_bar) {
  s.validate();
  require(qhat.rows() == s.n() && qhat.cols() == s.n(), Errc::DimensionMismatch,
          "Q_hat must be n x n");
  require(rhat.rows() == s.m() && rhat.cols() == s.m(), Errc::DimensionMismatch,
          "R_hat must be m x m");
  require(theta_bar.rows() == s.p() && theta_bar.cols() == s.n(), Errc::DimensionMismatch,
          "theta_bar must be p x n");
  require(is_pd(symmetrized(rhat, "R_hat")), Errc::NotPositiveDefinite, "R_hat must be > 0");
  require(is_psd(symmetrized(qhat, "Q_hat"), 1e-9 * std::max(1.0, max_abs(qhat))), Errc::NotPsd,
          "Q_hat must be >= 0");
  const Matrix g = left_pinv(s.x);
  const Matrix g0 = complement_projector(s.x, g);
  const Matrix theta_hat = s.y * g + theta_bar * g0;
  const Matrix shape = g.transpose() * (s.r + rhat) * g + g0.transpose() * qhat * g0;
  return from_center_shape(s.q, 0.5 * (shape + shape.transpose()), theta_hat);
}

/// Q_hat/R_hat reuse across samples sharing (priors, Q, R, epsilon, theta_bar).
class QhatCache {
 public:
  QhatSolution get_or_solve(std::span<const Qmi> priors, const Matrix& q, double gamma_sq,
                            const Matrix& theta_bar, QhatObjective objective,
                            const sdp::Settings& settings = {}) {
    const std::string key = make_key(priors, q, gamma_sq, theta_bar, objective);
    {
      std::shared_lock lock(mutex_);
      if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    QhatSolution sol = solve_qhat(priors, q, gamma_sq, theta_bar, objective, settings);
    std::unique_lock lock(mutex_);
    auto [it, inserted] = entries_.emplace(key, std::move(sol));
    if (inserted) ++misses_;
    return it->second;
  }

  [[nodiscard]] std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }
  [[nodiscard]] std::size_t solves() const {
    std::shared_lock lock(mutex_);
    return misses_;
  }

 private:
  static void append(std::string& key, const Matrix& m) {
    const Eigen::Index dims[2] = {m.rows(), m.cols()};
    key.append(reinterpret_cast<const char*>(dims), sizeof(dims));
    key.append(reinterpret_cast<const char*>(m.data()),
               static_cast<std::size_t>(m.size()) * sizeof(double));
  }

  static std::string make_key(std::span<const Qmi> priors, const Matrix& q, double gamma_sq,
                              const Matrix& theta_bar, QhatObjective objective) {
    std::string key;
    for (const auto& prior : priors) append(key, prior.matrix());
    append(key, q);
    append(key, theta_bar);
    key.append(reinterpret_cast<const char*>(&gamma_sq), sizeof(gamma_sq));
    key.push_back(objective == QhatObjective::Trace ? 'T' : 'L');
    return key;
  }

  mutable std::shared_mutex mutex_;
  std::map<std::string, QhatSolution> entries_;
  std::size_t misses_ = 0;
};

/// Full pipeline for one sample: R_hat from epsilon, cached Q_hat, enclosure.
inline Qmi reparameterize(const RegressionSample& s, std::span<const Qmi> priors,
                          const ReparamConfig& config, QhatCache* cache = nullptr,
                          const sdp::Settings& settings = {}) {
  s.validate();
  const auto rg = rhat_gamma_from_eps(s.r, config.epsilon, config.scaling);
  const Matrix theta_bar =
      config.theta_bar ? *config.theta_bar : detail::prior_free_center(priors, s.p(), s.n());
  const QhatSolution qs =
      cache != nullptr
          ? cache->get_or_solve(priors, s.q, rg.gamma_sq, theta_bar, config.objective, settings)
          : solve_qhat(priors, s.q, rg.gamma_sq, theta_bar, config.objective, settings);
  return reparameterize_sample(s, qs.qhat, rg.rhat, theta_bar);
}

/// QMI for the structural constraint sigma_max(E theta F + Gc) <= eps_s,
/// enclosed with the same single-sample machinery (X' = F, Y' = -E^+ Gc,
/// Q' = E'E, R' = eps_s^2 I).
inline RegressionSample structural_sample(const Matrix& e, const Matrix& f, const Matrix& gc,
                                          double eps_s) {
  require(eps_s > 0.0, Errc::InvalidArgument, "structural tolerance must be positive");
  require(gc.rows() == e.rows() && gc.cols() == f.cols(), Errc::DimensionMismatch,
          "Gc must be rows(E) x cols(F)");
  require(has_full_column_rank(f), Errc::RankDeficient, "F must have full column rank");
  const Matrix e_pinv = right_pinv(e);
  RegressionSample s;
  s.x = f;
  s.y = -e_pinv * gc;
  s.q = e.transpose() * e;
  s.r = eps_s * eps_s * identity(f.cols());
  return s;
}

inline Qmi structural_constraint_qmi(const Matrix& e, const Matrix& f, const Matrix& gc,
                                     double eps_s, std::span<const Qmi> priors,
                                     const ReparamConfig& config, QhatCache* cache = nullptr,
                                     const sdp::Settings& settings = {}) {
  return reparameterize(structural_sample(e, f, gc, eps_s), priors, config, cache, settings);
}

}  // namespace qmiest
