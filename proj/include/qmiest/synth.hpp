#pragma once

// Robust H-infinity estimator synthesis for the uncertain plant
//
//   x+ = A x + B_p w_p,   z_p = C_p x + D_p w_p,   y = C_y x + D_yp w_p
//
// written as an LFT with w = Delta z, z = [x; w_p], Delta = [[A, B_p], [C_y, D_yp]],
// and Delta known only through primal QMIs on its two row blocks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "qmiest/analysis.hpp"
#include "qmiest/errors.hpp"
#include "qmiest/matops.hpp"
#include "qmiest/qmi.hpp"
#include "qmiest/sdp.hpp"

namespace qmiest {

enum class RowBlock { AB, CD };

struct BlockQmi {
  RowBlock block = RowBlock::AB;
  Qmi qmi;
};

struct UncertainPlant {
  Eigen::Index n_x = 0, m_p = 0, p_y = 0, p_p = 0;
  Matrix c_p, d_p;
  Qmi qmi_ab;  // over [A, B_p]: p = n_x, n = n_x + m_p
  Qmi qmi_cd;  // over [C_y, D_yp]: p = p_y, n = n_x + m_p
  std::vector<BlockQmi> extra_qmis;
  // Unknown (C_p, D_p) would need a third row block; not supported.
  bool output_map_known = true;

  [[nodiscard]] Eigen::Index nw() const { return n_x + p_y; }
  [[nodiscard]] Eigen::Index nz() const { return n_x + m_p; }

  void validate() const {
    require(output_map_known, Errc::InvalidArgument, "unknown C_p, D_p are not supported");
    require(n_x > 0 && m_p > 0 && p_y > 0 && p_p > 0, Errc::DimensionMismatch,
            "plant dimensions must be positive");
    require(c_p.rows() == p_p && c_p.cols() == n_x && d_p.rows() == p_p && d_p.cols() == m_p,
            Errc::DimensionMismatch, "C_p " + shape_of(c_p) + " / D_p " + shape_of(d_p));
    auto check = [&](const Qmi& q, RowBlock b) {
      require(q.orientation() == Orientation::Primal, Errc::InvalidArgument,
              "plant QMIs must be primal");
      require(q.p() == (b == RowBlock::AB ? n_x : p_y) && q.n() == nz(),
              Errc::DimensionMismatch, "plant QMI has wrong dimensions");
    };
    check(qmi_ab, RowBlock::AB);
    check(qmi_cd, RowBlock::CD);
    for (const auto& e : extra_qmis) check(e.qmi, e.block);
  }

  /// All QMIs in multiplier order: qmi_ab, qmi_cd, then extra_qmis.
  [[nodiscard]] std::vector<BlockQmi> all_qmis() const {
    std::vector<BlockQmi> out{{RowBlock::AB, qmi_ab}, {RowBlock::CD, qmi_cd}};
    out.insert(out.end(), extra_qmis.begin(), extra_qmis.end());
    return out;
  }
};

/// Constant interconnection: rows [x+; z; z_p; y], columns [x; w; w_p].
struct LftInterconnection {
  Matrix m;
  Eigen::Index n_x, m_p, p_y, p_p;

  [[nodiscard]] Matrix state_row() const { return m.topRows(n_x); }
  [[nodiscard]] Matrix z_row() const { return m.middleRows(n_x, n_x + m_p); }
  [[nodiscard]] Matrix zp_row() const { return m.middleRows(2 * n_x + m_p, p_p); }
  [[nodiscard]] Matrix y_row() const { return m.bottomRows(p_y); }
};

inline LftInterconnection assemble_lft(const Matrix& c_p, const Matrix& d_p, Eigen::Index n_x,
                                       Eigen::Index m_p, Eigen::Index p_y) {
  const Eigen::Index p_p = c_p.rows();
  require(n_x > 0 && m_p > 0 && p_y > 0, Errc::DimensionMismatch, "dimensions must be positive");
  require(c_p.cols() == n_x && d_p.rows() == p_p && d_p.cols() == m_p, Errc::DimensionMismatch,
          "C_p " + shape_of(c_p) + " / D_p " + shape_of(d_p) + " do not fit the dimensions");
  const Eigen::Index nw = n_x + p_y;
  const Eigen::Index rows = n_x + (n_x + m_p) + p_p + p_y;
  const Eigen::Index cols = n_x + nw + m_p;
  Matrix m = Matrix::Zero(rows, cols);
  m.block(0, n_x, n_x, n_x) = identity(n_x);                    // x+ = [I 0] w
  m.block(n_x, 0, n_x, n_x) = identity(n_x);                    // z = [x; w_p]
  m.block(2 * n_x, n_x + nw, m_p, m_p) = identity(m_p);
  const Eigen::Index zp = 2 * n_x + m_p;
  m.block(zp, 0, p_p, n_x) = c_p;
  m.block(zp, n_x + nw, p_p, m_p) = d_p;
  m.block(zp + p_p, 2 * n_x, p_y, p_y) = identity(p_y);         // y = [0 I] w
  return {m, n_x, m_p, p_y, p_p};
}

namespace detail {

// Row-block selector mapping [Delta; I] to [block; I].
inline Matrix block_selector(const UncertainPlant& pl, RowBlock b) {
  const Eigen::Index rows_b = b == RowBlock::AB ? pl.n_x : pl.p_y;
  const Eigen::Index offset = b == RowBlock::AB ? 0 : pl.n_x;
  Matrix s = Matrix::Zero(rows_b + pl.nz(), pl.nw() + pl.nz());
  s.block(0, offset, rows_b, rows_b) = identity(rows_b);
  s.block(rows_b, pl.nw(), pl.nz(), pl.nz()) = identity(pl.nz());
  return s;
}

inline Matrix embedded(const UncertainPlant& pl, const BlockQmi& q) {
  const Matrix s = block_selector(pl, q.block);
  return s.transpose() * q.qmi.matrix() * s;
}

// Maps v = [xi; w; w_p] to [w; z] with z = [x; w_p].
inline Matrix lft_t(const UncertainPlant& pl) {
  const Eigen::Index n = pl.n_x, nw = pl.nw(), nz = pl.nz();
  Matrix t = Matrix::Zero(nw + nz, 2 * n + nw + pl.m_p);
  t.block(0, 2 * n, nw, nw) = identity(nw);
  t.block(nw, 0, n, n) = identity(n);
  t.block(nw + n, 2 * n + nw, pl.m_p, pl.m_p) = identity(pl.m_p);
  return t;
}

// Change of variables v = L v' with w = Sigma wbar + Delta_bar z, where
// Delta_bar stacks the centers of the two prior QMIs and Sigma scales each
// row block by the prior's radius. The robust LMI is congruent under L, so
// nothing changes mathematically, but a small prior far from the origin no
// longer leaves its information in the cancellation S - c'Wc.
inline Matrix lft_congruence(const UncertainPlant& pl) {
  const Eigen::Index n = pl.n_x, nw = pl.nw(), mp = pl.m_p;
  Matrix l = identity(2 * n + nw + mp);
  const Qmi* priors[2] = {&pl.qmi_ab, &pl.qmi_cd};
  Eigen::Index row = 2 * n;
  for (const Qmi* q : priors) {
    const Eigen::Index p = q->p();
    const auto c = bounded_center(*q);
    if (c) {
      const Matrix w = -q->matrix().topLeftCorner(p, p);
      const Matrix shape = q->matrix().bottomRightCorner(pl.nz(), pl.nz()) + c->transpose() * w * *c;
      const double tw = w.trace() / static_cast<double>(p);
      const double ts = shape.trace() / static_cast<double>(pl.nz());
      const double radius = tw > 0.0 && ts > 0.0 ? std::sqrt(ts / tw) : 1.0;
      l.block(row, row, p, p) = radius * identity(p);
      l.block(row, 0, p, n) = c->leftCols(n);
      l.block(row, 2 * n + nw, p, mp) = c->rightCols(mp);
    }
    row += p;
  }
  return l;
}

// Per-QMI weights 1 / max|Pi_i|: the solver sees unit-scale data while the
// reported multipliers (solver value times weight) refer to the original Pi_i.
// after the congruence L.
inline std::vector<Matrix> transformed_qmis(const UncertainPlant& pl, const Matrix& l) {
  const Matrix tl = lft_t(pl) * l;
  std::vector<Matrix> out;
  for (const auto& q : pl.all_qmis()) {
    const Matrix m = tl.transpose() * embedded(pl, q) * tl;
    out.push_back(0.5 * (m + m.transpose()));
  }
  return out;
}

inline std::vector<double> qmi_weights(const std::vector<Matrix>& transformed) {
  std::vector<double> out;
  for (const auto& t : transformed) {
    const double m = t.cwiseAbs().maxCoeff();
    out.push_back(m > 0.0 ? 1.0 / m : 1.0);
  }
  return out;
}

inline std::vector<double> scaled_multipliers(const sdp::SdpSolution& sol,
                                              const std::vector<int>& lambdas,
                                              const std::vector<double>& weights) {
  std::vector<double> lv;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    lv.push_back(std::max(0.0, sol.value(lambdas[i])) * weights[i]);
  }
  return lv;
}

// diag((1 - eps) Xcal, 0, g I) - L'T' P(lambda) T L, each Pi_i taken with its
// weight. L leaves the first term unchanged since it only rewrites w.
inline sdp::AffineMatrix dissipation_block(const UncertainPlant& pl, const sdp::AffineMatrix& xcal,
                                           int g, const std::vector<int>& lambdas, double eps,
                                           const std::vector<Matrix>& transformed,
                                           const std::vector<double>& weights) {
  const Eigen::Index n = pl.n_x, nw = pl.nw(), mp = pl.m_p;
  sdp::BlockBuilder d({2 * n, nw, mp}, {2 * n, nw, mp});
  d.set(0, 0, (1.0 - eps) * xcal);
  d.set(2, 2, sdp::AffineMatrix::variable_entry(mp, mp, g, identity(mp)));
  sdp::AffineMatrix out = d.build();
  for (std::size_t i = 0; i < transformed.size(); ++i) {
    out = out - sdp::AffineMatrix::variable_entry(transformed[i].rows(), transformed[i].cols(),
                                                  lambdas[i], weights[i] * transformed[i]);
  }
  return out;
}

inline MultiplierVector split_multipliers(const std::vector<double>& all) {
  MultiplierVector m;
  m.taus.assign(all.begin(), all.begin() + 2);
  m.lambdas.assign(all.begin() + 2, all.end());
  return m;
}

}  // namespace detail

/// P = sum of multiplier * selector' Pi selector; [Delta; I]' P [Delta; I] >= 0
/// whenever every row block satisfies its QMIs.
inline Matrix multiplier_p(const MultiplierVector& mult, const UncertainPlant& pl) {
  pl.validate();
  const auto qmis = pl.all_qmis();
  const auto w = mult.flattened();
  require(mult.taus.size() == 2 && w.size() == qmis.size(), Errc::DimensionMismatch,
          "expected 2 prior multipliers and " + std::to_string(pl.extra_qmis.size()) +
              " extra multipliers");
  Matrix p = Matrix::Zero(pl.nw() + pl.nz(), pl.nw() + pl.nz());
  for (std::size_t i = 0; i < qmis.size(); ++i) {
    require(w[i] >= 0.0, Errc::NegativeMultiplier, "multiplier " + std::to_string(i) + " < 0");
    p += w[i] * detail::embedded(pl, qmis[i]);
  }
  return p;
}

struct SynthesisOptions {
  /// Contraction margin: V(xi+) <= (1 - eps) V(xi) along the unforced loop,
  /// so certified error systems have spectral radius <= sqrt(1 - eps).
  double stability_margin = 1e-7;
  /// Lower bound on Z so that A_E = Z^{-1} A_tilde stays well defined.
  double z_floor = 1e-7;
  sdp::Settings settings{};
};

struct SynthesisResult {
  Estimator estimator;
  double gamma = 0.0;
  MultiplierVector multipliers;
  Matrix lyapunov_certificate;
  sdp::SdpSolution solver_report;
};

/// Single SDP over Xcal = [[X, Z], [Z, Z]], A_tilde = Z A_E, B_tilde = Z B_E,
/// C_E, D_E, g = gamma^2 and one multiplier per QMI:
///
///   [[diag(Xcal, 0, g I) - T'PT, (Xcal M)', N'], [Xcal M, Xcal, 0], [N, 0, I]] >= 0
///
/// with M = [Acal, Bcal_w, 0] and N = [Ccal_e, Dcal_ew, D_p] the error-system maps.
/// The recentered form is solved first; if the solver does not finish cleanly
/// the plain form is tried and the better clean answer is kept. The returned
/// realization is balanced so that the estimator block of the certificate is I.
inline SynthesisResult synthesize(const UncertainPlant& pl, const SynthesisOptions& opt = {}) {
  pl.validate();
  const Eigen::Index n = pl.n_x, nw = pl.nw(), mp = pl.m_p, py = pl.p_y, pp = pl.p_p;

  auto attempt = [&](bool recenter) {
    sdp::LmiProblem prob;
    const auto x = prob.add_symmetric("X", n, false);
    const auto z = prob.add_symmetric("Z", n, false);
    const auto at = prob.add_matrix("A_tilde", n, n);
    const auto bt = prob.add_matrix("B_tilde", n, py);
    const auto ce = prob.add_matrix("C_E", pp, n);
    const auto de = prob.add_matrix("D_E", pp, py);
    const int g = prob.add_scalar("gamma_sq", 0.0);
    std::vector<int> lambdas;
    for (std::size_t i = 0; i < pl.all_qmis().size(); ++i) {
      lambdas.push_back(prob.add_scalar("lambda" + std::to_string(i), 0.0));
    }
    prob.add_lmi("Z floor", z - opt.z_floor * identity(n));

    sdp::BlockBuilder xb({n, n}, {n, n});
    xb.set(0, 0, x);
    xb.set(0, 1, z);
    xb.set(1, 0, z);
    xb.set(1, 1, z);
    const sdp::AffineMatrix xcal = xb.build();

    // Xcal [Acal, Bcal_w, 0] = [[0, At, X, Bt, 0], [0, At, Z, Bt, 0]]
    sdp::BlockBuilder xm({n, n}, {n, n, n, py, mp});
    xm.set(0, 1, at);
    xm.set(1, 1, at);
    xm.set(0, 2, x);
    xm.set(1, 2, z);
    xm.set(0, 3, bt);
    xm.set(1, 3, bt);
    // N = [C_p, -C_E, 0, -D_E, D_p]
    sdp::BlockBuilder nb({pp}, {n, n, n, py, mp});
    nb.set(0, 0, pl.c_p);
    nb.set(0, 1, -1.0 * ce);
    nb.set(0, 3, -1.0 * de);
    nb.set(0, 4, pl.d_p);

    const Eigen::Index dv = 2 * n + nw + mp;
    const Matrix l = recenter ? detail::lft_congruence(pl) : identity(dv);
    const auto transformed = detail::transformed_qmis(pl, l);
    const auto weights = detail::qmi_weights(transformed);
    sdp::BlockBuilder big({dv, 2 * n, pp}, {dv, 2 * n, pp});
    big.set(0, 0, detail::dissipation_block(pl, xcal, g, lambdas, opt.stability_margin, transformed,
                                            weights));
    big.set_sym(1, 0, xm.build() * l);
    big.set(1, 1, xcal);
    big.set_sym(2, 0, nb.build() * l);
    big.set(2, 2, identity(pp));
    prob.add_lmi("robust bounded-real", big.build());
    prob.minimize(g);

    const auto sol = sdp::solve(prob, opt.settings);
    std::optional<SynthesisResult> out;
    if (sol.values.size() == 0 || !(sol.optimal() || sol.max_constraint_violation < 1e-5)) {
      return std::pair{sol, out};
    }
    // Estimator state x_hat' = R' x_hat with Z = R R', so the certificate reads
    // [[X, R], [R', I]]. Nearly singular Z would otherwise leave A_E = Z^{-1} A_tilde
    // badly scaled.
    const Matrix zv = sol.value(z);
    const Eigen::SelfAdjointEigenSolver<Matrix> zeig(0.5 * (zv + zv.transpose()));
    const Vector root = zeig.eigenvalues().cwiseMax(0.5 * opt.z_floor).cwiseSqrt();
    const Matrix r_inv = root.cwiseInverse().asDiagonal() * zeig.eigenvectors().transpose();
    const Matrix r_fac = zeig.eigenvectors() * root.asDiagonal();
    SynthesisResult r;
    r.estimator = {r_inv * sol.value(at) * r_inv.transpose(), r_inv * sol.value(bt),
                   sol.value(ce) * r_inv.transpose(), sol.value(de)};
    r.gamma = std::sqrt(std::max(0.0, sol.value(g)));
    r.multipliers = detail::split_multipliers(detail::scaled_multipliers(sol, lambdas, weights));
    const Matrix xv = sol.value(x);
    r.lyapunov_certificate.resize(2 * n, 2 * n);
    r.lyapunov_certificate << 0.5 * (xv + xv.transpose()), r_fac, r_fac.transpose(), identity(n);
    r.solver_report = sol;
    out = std::move(r);
    return std::pair{sol, out};
  };

  auto [first, result] = attempt(true);
  if (!first.optimal()) {
    auto [second, fallback] = attempt(false);
    if (fallback && (!result || second.optimal() || fallback->gamma < result->gamma)) {
      result = std::move(fallback);
    }
    if (!result) {
      // both forms failed; report the infeasibility verdict if either reached one
      const bool infeasible = first.status == sdp::Status::Infeasible ||
                              first.status == sdp::Status::Unbounded ||
                              second.status == sdp::Status::Infeasible ||
                              second.status == sdp::Status::Unbounded;
      const auto& rep = first.status == sdp::Status::Infeasible ||
                                first.status == sdp::Status::Unbounded
                            ? first
                            : second;
      require(!infeasible, Errc::Infeasible,
              "no robust estimator exists for this uncertainty (" + rep.solver_status + ")");
      fail(Errc::SolverFailure, "synthesis SDP ended with " + first.solver_status + ", violation " +
                                    std::to_string(first.max_constraint_violation));
    }
  }
  return *result;
}

struct RobustBoundCheck {
  bool certified = false;
  double gamma_checked = 0.0;
  Matrix lyapunov;
  MultiplierVector multipliers;
  /// Smallest gamma the analysis SDP attains for this estimator.
  double gamma_min = std::numeric_limits<double>::infinity();
  double margin = 0.0;
  std::string report;
};

/// Analysis SDP with the estimator fixed over a full Lyapunov matrix and
/// multipliers. Minimizing gamma^2 instead of testing the single level
/// gamma (1 + 1e-5) keeps the program strictly feasible; the bound is
/// certified when the optimum lies at or below that level. As in synthesize,
/// the plain form backs up the recentered one.
inline RobustBoundCheck verify_robust_bound(const UncertainPlant& pl, const Estimator& est,
                                            double gamma, const SynthesisOptions& opt = {}) {
  pl.validate();
  const Eigen::Index n = pl.n_x, nw = pl.nw(), mp = pl.m_p, py = pl.p_y, pp = pl.p_p;
  require(est.a_e.rows() == n && est.a_e.cols() == n && est.b_e.rows() == n &&
              est.b_e.cols() == py && est.c_e.rows() == pp && est.c_e.cols() == n &&
              est.d_e.rows() == pp && est.d_e.cols() == py,
          Errc::DimensionMismatch, "estimator does not match the plant");

  auto attempt = [&](bool recenter) {
    RobustBoundCheck out;
    out.gamma_checked = gamma * (1.0 + 1e-5);
    sdp::LmiProblem prob;
    const auto xcal = prob.add_symmetric("Xcal", 2 * n, false);
    const int g = prob.add_scalar("gamma_sq", 0.0);
    prob.minimize(g);
    std::vector<int> lambdas;
    for (std::size_t i = 0; i < pl.all_qmis().size(); ++i) {
      lambdas.push_back(prob.add_scalar("lambda" + std::to_string(i), 0.0));
    }
    Matrix m = Matrix::Zero(2 * n, 2 * n + nw + mp);  // [Acal, Bcal_w, 0]
    m.block(n, n, n, n) = est.a_e;
    m.block(0, 2 * n, n, n) = identity(n);
    m.block(n, 3 * n, n, py) = est.b_e;
    Matrix nrow(pp, 2 * n + nw + mp);
    nrow << pl.c_p, -est.c_e, zeros(pp, n), -est.d_e, pl.d_p;
    const Eigen::Index dv = 2 * n + nw + mp;
    const Matrix l = recenter ? detail::lft_congruence(pl) : identity(dv);
    const auto transformed = detail::transformed_qmis(pl, l);
    const auto weights = detail::qmi_weights(transformed);
    sdp::BlockBuilder big({dv, 2 * n, pp}, {dv, 2 * n, pp});
    big.set(0, 0, detail::dissipation_block(pl, xcal, g, lambdas, opt.stability_margin, transformed,
                                            weights));
    big.set_sym(1, 0, xcal * (m * l));
    big.set(1, 1, xcal);
    big.set_sym(2, 0, nrow * l);
    big.set(2, 2, identity(pp));
    prob.add_lmi("robust bounded-real (fixed estimator)", big.build());

    sdp::SdpSolution sol;
    try {
      sol = sdp::solve(prob, opt.settings);
    } catch (const Error& e) {
      if (e.code() != Errc::SolverFailure) throw;
      out.report = std::string("solver failure: ") + e.what();
      return std::pair{false, out};
    }
    out.report = sol.solver_status;
    if (sol.status == sdp::Status::Infeasible) {
      out.report = "refuted: estimator is not robustly stabilizing for this uncertainty";
      return std::pair{true, out};
    }
    if (sol.values.size() == 0) return std::pair{false, out};
    out.margin = sdp::feasibility_margin(prob, sol.values);
    out.multipliers = detail::split_multipliers(detail::scaled_multipliers(sol, lambdas, weights));
    out.lyapunov = sol.value(xcal);
    const bool solved = sol.optimal() || sol.max_constraint_violation < 1e-6;
    if (solved) out.gamma_min = std::sqrt(std::max(0.0, sol.value(g)));
    out.certified = solved && out.margin >= -1e-6 && out.gamma_min <= out.gamma_checked;
    out.report = out.certified ? "certified at gamma " + std::to_string(out.gamma_checked)
                 : solved      ? "refuted: smallest certifiable gamma is " +
                                  std::to_string(out.gamma_min)
                               : "analysis SDP ended with " + sol.solver_status;
    return std::pair{solved, out};
  };

  auto [clean, out] = attempt(true);
  if (out.certified) return out;
  auto [clean2, plain] = attempt(false);
  if (plain.certified || (clean2 && !clean)) return plain;
  return out;
}

struct ValidationReport {
  bool pass = false;
  int samples = 0;
  int unstable = 0;
  double max_norm = 0.0;
  double max_ratio = 0.0;
  double gamma = 0.0;
  std::vector<double> norms;
};

namespace detail {

// Witness points for one row block: the multiplier-weighted combination of
// its QMIs (a superset of the consistent set that the certificate covers).
inline std::vector<Matrix> block_witnesses(const UncertainPlant& pl, RowBlock b,
                                           const std::vector<double>& weights, int count,
                                           std::uint64_t seed) {
  const auto all = pl.all_qmis();
  std::vector<Qmi> qs;
  std::vector<double> ws, unit;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].block != b) continue;
    qs.push_back(all[i].qmi);
    ws.push_back(weights[i]);
    unit.push_back(1.0);
  }
  const Qmi weighted = nonneg_combination(qs, ws);
  if (is_bounded(weighted)) return sample_members(weighted, count, seed);
  // Weighted set unbounded: draw from the unit-weight sum and keep points the
  // weighted combination still admits.
  const Qmi source = nonneg_combination(qs, unit);
  require(is_bounded(source), Errc::Unbounded, "row-block uncertainty set is unbounded");
  std::vector<Matrix> out;
  for (int round = 0; round < 50 && static_cast<int>(out.size()) < count; ++round) {
    for (auto& t : sample_members(source, count, seed + 7919ull * round)) {
      if (contains(weighted, t, 1e-9) && static_cast<int>(out.size()) < count) out.push_back(t);
    }
  }
  require(!out.empty(), Errc::Unbounded, "could not draw witnesses from the uncertainty set");
  while (static_cast<int>(out.size()) < count) out.push_back(out[out.size() % out.size()]);
  return out;
}

}  // namespace detail

/// Samples Delta from the certified uncertainty set and checks every sampled
/// error-system norm against gamma (1 + 1e-3).
inline ValidationReport validate_by_sampling(const UncertainPlant& pl, const SynthesisResult& res,
                                             int count, std::uint64_t seed) {
  pl.validate();
  require(count > 0, Errc::InvalidArgument, "count must be positive");
  const auto w = res.multipliers.flattened();
  require(w.size() == pl.all_qmis().size(), Errc::DimensionMismatch,
          "multipliers do not match the plant QMIs");
  const auto ab = detail::block_witnesses(pl, RowBlock::AB, w, count, seed);
  const auto cd = detail::block_witnesses(pl, RowBlock::CD, w, count, seed ^ 0x9e3779b97f4a7c15ull);
  ValidationReport rep;
  rep.gamma = res.gamma;
  rep.samples = count;
  std::vector<StateSpace> systems;
  for (int k = 0; k < count; ++k) {
    Matrix delta(pl.nw(), pl.nz());
    delta << ab[k], cd[k];
    const auto plant = PlantRealization::from_delta(delta, pl.n_x, pl.c_p, pl.d_p);
    StateSpace e = closed_loop_error_system(plant, res.estimator);
    if (spectral_radius(e.a) >= 1.0) {
      ++rep.unstable;
      rep.norms.push_back(std::numeric_limits<double>::infinity());
      systems.push_back({});
      continue;
    }
    rep.norms.push_back(hinf_norm(e, 1e-6, HinfMethod::GridOnly));
    systems.push_back(std::move(e));
  }
  // Re-check the worst few with the LMI estimate as well.
  std::vector<int> order(count);
  for (int k = 0; k < count; ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return rep.norms[a] > rep.norms[b]; });
  for (int i = 0; i < std::min(count, 3); ++i) {
    const int k = order[i];
    if (std::isfinite(rep.norms[k])) rep.norms[k] = hinf_norm(systems[k]);
  }
  rep.max_norm = *std::max_element(rep.norms.begin(), rep.norms.end());
  rep.max_ratio = res.gamma > 0 ? rep.max_norm / res.gamma
                                : (rep.max_norm > 0 ? std::numeric_limits<double>::infinity() : 0.0);
  rep.pass = rep.unstable == 0 && rep.max_norm <= res.gamma * (1.0 + 1e-3) + 1e-12;
  return rep;
}

}  // namespace qmiest
