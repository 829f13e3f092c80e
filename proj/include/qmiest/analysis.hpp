#pragma once

// Discrete-time LTI analysis: stability, H-infinity norm, the estimation
// error system, and witness sampling from bounded primal QMIs.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "qmiest/errors.hpp"
#include "qmiest/matops.hpp"
#include "qmiest/qmi.hpp"
#include "qmiest/sdp.hpp"

namespace qmiest {

struct StateSpace {
  Matrix a, b, c, d;

  [[nodiscard]] Eigen::Index states() const { return a.rows(); }
  [[nodiscard]] Eigen::Index inputs() const { return b.cols(); }
  [[nodiscard]] Eigen::Index outputs() const { return c.rows(); }

  void validate() const {
    require(a.rows() == a.cols(), Errc::DimensionMismatch, "A must be square");
    require(b.rows() == a.rows() && c.cols() == a.rows() && d.rows() == c.rows() &&
                d.cols() == b.cols(),
            Errc::DimensionMismatch,
            "inconsistent realization A " + shape_of(a) + " B " + shape_of(b) + " C " +
                shape_of(c) + " D " + shape_of(d));
  }
};

/// x_hat+ = A_E x_hat + B_E y,  z_hat = C_E x_hat + D_E y.
struct Estimator {
  Matrix a_e, b_e, c_e, d_e;
};

/// Plant matrices of the estimation problem; (C_p, D_p) are known.
struct PlantRealization {
  Matrix a, b_p, c_y, d_yp, c_p, d_p;

  [[nodiscard]] Eigen::Index nx() const { return a.rows(); }
  [[nodiscard]] Eigen::Index mp() const { return b_p.cols(); }
  [[nodiscard]] Eigen::Index py() const { return c_y.rows(); }
  [[nodiscard]] Eigen::Index pp() const { return c_p.rows(); }

  /// Delta = [[A, B_p], [C_y, D_yp]].
  [[nodiscard]] Matrix delta() const {
    Matrix out(nx() + py(), nx() + mp());
    out << a, b_p, c_y, d_yp;
    return out;
  }

  static PlantRealization from_delta(const Matrix& delta, Eigen::Index nx, const Matrix& c_p,
                                     const Matrix& d_p) {
    const Eigen::Index mp = delta.cols() - nx;
    const Eigen::Index py = delta.rows() - nx;
    require(mp >= 0 && py >= 0, Errc::DimensionMismatch, "Delta too small for nx");
    return {delta.topLeftCorner(nx, nx), delta.topRightCorner(nx, mp),
            delta.bottomLeftCorner(py, nx), delta.bottomRightCorner(py, mp), c_p, d_p};
  }
};

inline double spectral_radius(const Matrix& a) {
  require_square(a, "A");
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// sigma_max of C (zI - A)^{-1} B + D at z = e^{j w}.
inline double frequency_gain(const StateSpace& sys, double omega) {
  using C = std::complex<double>;
  using CMatrix = Eigen::MatrixXcd;
  const Eigen::Index n = sys.states();
  CMatrix h = sys.d.cast<C>();
  if (n > 0) {
    const C z = std::polar(1.0, omega);
    CMatrix zia = -sys.a.cast<C>();
    zia.diagonal().array() += z;
    h += sys.c.cast<C>() * zia.partialPivLu().solve(sys.b.cast<C>());
  }
  if (h.size() == 0) return 0.0;
  Eigen::JacobiSVD<CMatrix> svd(h);
  return svd.singularValues()(0);
}

struct GridPeak {
  double gain = 0.0;
  double omega = 0.0;
};

/// 512-point grid on [0, pi] plus golden-section refinement around the best
/// local maxima.
inline GridPeak hinf_grid(const StateSpace& sys, int points = 512) {
  const double pi = std::numbers::pi;
  std::vector<double> w(points), g(points);
  for (int i = 0; i < points; ++i) {
    // denser near 0 where lightly damped low-frequency peaks live
    const double u = static_cast<double>(i) / (points - 1);
    w[i] = pi * (0.5 * u + 0.5 * u * u);
    g[i] = frequency_gain(sys, w[i]);
  }
  std::vector<int> peaks;
  for (int i = 0; i < points; ++i) {
    const bool left = i == 0 || g[i] >= g[i - 1];
    const bool right = i == points - 1 || g[i] >= g[i + 1];
    if (left && right) peaks.push_back(i);
  }
  std::sort(peaks.begin(), peaks.end(), [&](int x, int y) { return g[x] > g[y]; });
  if (peaks.size() > 6) peaks.resize(6);
  GridPeak best;
  for (int i = 0; i < points; ++i) {
    if (g[i] > best.gain) best = {g[i], w[i]};
  }
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int i : peaks) {
    double lo = w[std::max(0, i - 1)];
    double hi = w[std::min(points - 1, i + 1)];
    double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
    double f1 = frequency_gain(sys, x1), f2 = frequency_gain(sys, x2);
    for (int it = 0; it < 80 && hi - lo > 1e-13; ++it) {
      if (f1 < f2) {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + inv_phi * (hi - lo);
        f2 = frequency_gain(sys, x2);
      } else {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - inv_phi * (hi - lo);
        f1 = frequency_gain(sys, x1);
      }
    }
    for (auto [f, x] : {std::pair{f1, x1}, std::pair{f2, x2}}) {
      if (f > best.gain) best = {f, x};
    }
  }
  return best;
}

/// Smallest g with the discrete bounded-real LMI
///   [[P, 0, A'P, C'], [0, g I, B'P, D'], [PA, PB, P, 0], [C, D, 0, I]] >= 0
/// feasible; returns sqrt(g).
inline double hinf_lmi(const StateSpace& sys, const sdp::Settings& settings = {}) {
  const Eigen::Index n = sys.states(), m = sys.inputs(), p = sys.outputs();
  sdp::LmiProblem prob;
  const auto pv = prob.add_symmetric("P", n, false);
  const int g = prob.add_scalar("g", 0.0);
  sdp::BlockBuilder bb({n, m, n, p}, {n, m, n, p});
  bb.set(0, 0, pv);
  bb.set(1, 1, sdp::AffineMatrix::variable_entry(m, m, g, identity(m)));
  bb.set_sym(2, 0, pv * sys.a);
  bb.set_sym(2, 1, pv * sys.b);
  bb.set(2, 2, pv);
  bb.set_sym(3, 0, sys.c);
  bb.set_sym(3, 1, sys.d);
  bb.set(3, 3, identity(p));
  prob.add_lmi("bounded_real", bb.build());
  prob.minimize(g);
  const auto sol = sdp::solve(prob, settings);
  require(sol.status == sdp::Status::Optimal || sol.max_constraint_violation < 1e-5,
          Errc::SolverFailure, "bounded-real SDP ended with " + sol.solver_status);
  return std::sqrt(std::max(0.0, sol.value(g)));
}

enum class HinfMethod { LmiAndGrid, GridOnly };

/// H-infinity norm of a Schur-stable system: the larger of the refined grid
/// peak (a lower bound) and the bounded-real LMI optimum.
inline double hinf_norm(const StateSpace& sys, double tol = 1e-6,
                        HinfMethod method = HinfMethod::LmiAndGrid) {
  sys.validate();
  const double rho = spectral_radius(sys.a);
  require(rho < 1.0, Errc::Unstable, "spectral radius " + std::to_string(rho) + " >= 1");
  const double grid = hinf_grid(sys).gain;
  if (method == HinfMethod::GridOnly || sys.states() == 0) {
    return std::max(grid, sys.d.size() ? sigma_max(sys.d) : 0.0);
  }
  sdp::Settings s;
  s.tol_gap_rel = std::min(1e-8, tol);
  s.tol_gap_abs = std::min(1e-8, tol);
  return std::max(grid, hinf_lmi(sys, s));
}

/// State [x; x_hat], input w_p, output z_p - z_hat.
inline StateSpace closed_loop_error_system(const PlantRealization& pl, const Estimator& est) {
  const Eigen::Index nx = pl.nx(), ne = est.a_e.rows();
  require(pl.b_p.rows() == nx && pl.c_y.cols() == nx && pl.c_p.cols() == nx &&
              pl.d_yp.rows() == pl.py() && pl.d_yp.cols() == pl.mp() &&
              pl.d_p.rows() == pl.pp() && pl.d_p.cols() == pl.mp(),
          Errc::DimensionMismatch, "plant realization is inconsistent");
  require(ne == nx && est.a_e.cols() == ne && est.b_e.rows() == ne && est.b_e.cols() == pl.py() &&
              est.c_e.rows() == pl.pp() && est.c_e.cols() == ne &&
              est.d_e.rows() == pl.pp() && est.d_e.cols() == pl.py(),
          Errc::DimensionMismatch, "estimator must be full order and match the plant");
  StateSpace out;
  out.a = Matrix::Zero(nx + ne, nx + ne);
  out.a.topLeftCorner(nx, nx) = pl.a;
  out.a.bottomLeftCorner(ne, nx) = est.b_e * pl.c_y;
  out.a.bottomRightCorner(ne, ne) = est.a_e;
  out.b.resize(nx + ne, pl.mp());
  out.b << pl.b_p, est.b_e * pl.d_yp;
  out.c.resize(pl.pp(), nx + ne);
  out.c << pl.c_p - est.d_e * pl.c_y, -est.c_e;
  out.d = pl.d_p - est.d_e * pl.d_yp;
  return out;
}

/// u -> g1 -> g2.
inline StateSpace series(const StateSpace& g1, const StateSpace& g2) {
  const Eigen::Index n1 = g1.states(), n2 = g2.states();
  StateSpace out;
  out.a = Matrix::Zero(n1 + n2, n1 + n2);
  out.a.topLeftCorner(n1, n1) = g1.a;
  out.a.bottomLeftCorner(n2, n1) = g2.b * g1.c;
  out.a.bottomRightCorner(n2, n2) = g2.a;
  out.b.resize(n1 + n2, g1.inputs());
  out.b << g1.b, g2.b * g1.d;
  out.c.resize(g2.outputs(), n1 + n2);
  out.c << g2.d * g1.c, g2.c;
  out.d = g2.d * g1.d;
  return out;
}

/// Witness points of a bounded primal QMI: the center, at least 10% boundary
/// points, and the rest at radius fractions u^{1/(pn)} along random directions.
inline std::vector<Matrix> sample_members(const Qmi& q, int count, std::uint64_t seed) {
  require(q.orientation() == Orientation::Primal, Errc::InvalidArgument,
          "sample_members expects a primal QMI");
  const auto center = bounded_center(q);
  require(center.has_value(), Errc::Unbounded, "QMI is unbounded (Pi11 not negative definite)");
  const Eigen::Index p = q.p(), n = q.n();
  const Matrix w = -q.pi11();
  const Matrix shape = q.pi22() + center->transpose() * w * *center;
  const Matrix sh = 0.5 * (shape + shape.transpose());
  const double scale = std::max(1.0, max_abs(q.matrix()));
  require(min_eigenvalue(sh) >= -1e-9 * scale, Errc::Infeasible, "QMI set is empty");
  const bool degenerate = max_eigenvalue(sh) <= 1e-14 * scale;
  std::vector<Matrix> out;
  if (count <= 0) return out;
  out.push_back(*center);
  if (degenerate) {
    out.resize(static_cast<std::size_t>(count), *center);
    return out;
  }
  // S^{-1/2} on the range of S; directions leaving the range get t = 0.
  Eigen::SelfAdjointEigenSolver<Matrix> es(sh);
  Vector inv_root = es.eigenvalues();
  const double cutoff = 1e-12 * es.eigenvalues().maxCoeff();
  for (Eigen::Index i = 0; i < inv_root.size(); ++i) {
    inv_root(i) = inv_root(i) > cutoff ? 1.0 / std::sqrt(inv_root(i)) : 0.0;
  }
  const Matrix s_inv_half = es.eigenvectors() * inv_root.asDiagonal() * es.eigenvectors().transpose();
  const bool full_rank = (es.eigenvalues().array() > cutoff).all();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int boundary = std::max(1, (count + 9) / 10);
  const double dim = static_cast<double>(p * n);
  for (int k = 1; k < count; ++k) {
    Matrix u(p, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < p; ++i) u(i, j) = normal(rng);
    u /= std::max(u.norm(), 1e-300);
    const double frac = k <= boundary ? 1.0 - 1e-10 : std::pow(unif(rng), 1.0 / dim);
    double t_max = 0.0;
    if (full_rank) {
      const Matrix m = s_inv_half * u.transpose() * w * u * s_inv_half;
      const double lam = max_eigenvalue(m);
      t_max = lam > 0 ? 1.0 / std::sqrt(lam) : 0.0;
    }
    out.push_back(*center + frac * t_max * u);
  }
  return out;
}

}  // namespace qmiest
