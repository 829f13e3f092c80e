#pragma once

// Prior sets built from all samples at once.
//
// Stacking N samples with per-sample bounds W_k' Q W_k <= R gives the combined
// bound W_st' Q W_st <= diag(NR, ..., NR) on W_st = [W_1 ... W_N]. In the dual
// orientation the consistent parameters are
//
//   { theta : Q^{-1} - (Y_st - theta X_st) R_c^{-1} (Y_st - theta X_st)' > 0 },
//
// which dualizes into a bounded primal QMI once X_st has full row rank.

#include <optional>
#include <span>
#include <vector>

#include "qmiest/errors.hpp"
#include "qmiest/matops.hpp"
#include "qmiest/qmi.hpp"
#include "qmiest/reparam.hpp"

namespace qmiest {

struct StackedSample {
  Matrix x;        // n x (mN)
  Matrix y;        // p x (mN)
  Matrix q;        // p x p
  Matrix r_block;  // (mN) x (mN), blockdiag(NR, ..., NR)
  int count = 0;

  [[nodiscard]] Eigen::Index n() const { return x.rows(); }
  [[nodiscard]] Eigen::Index p() const { return y.rows(); }

  /// W_st' Q W_st <= R_c evaluated at theta.
  [[nodiscard]] bool consistent(const Matrix& theta, double tol = 0.0) const {
    const Matrix w = y - theta * x;
    return is_psd(r_block - w.transpose() * q * w, tol);
  }
};

inline StackedSample stack_samples(std::span<const RegressionSample> samples) {
  require(!samples.empty(), Errc::InvalidArgument, "no samples to stack");
  const RegressionSample& ref = samples.front();
  ref.validate();
  const Eigen::Index m = ref.m();
  const auto count = static_cast<Eigen::Index>(samples.size());
  for (const auto& s : samples) {
    s.validate();
    require(s.n() == ref.n() && s.m() == m && s.p() == ref.p(), Errc::HeterogeneousSamples,
            "samples differ in dimensions");
    const double scale = std::max(1.0, std::max(max_abs(ref.q), max_abs(ref.r)));
    require(max_abs(s.q - ref.q) <= 1e-12 * scale && max_abs(s.r - ref.r) <= 1e-12 * scale,
            Errc::HeterogeneousSamples, "samples differ in their disturbance bound (Q, R)");
  }
  StackedSample st;
  st.x.resize(ref.n(), m * count);
  st.y.resize(ref.p(), m * count);
  st.r_block = Matrix::Zero(m * count, m * count);
  for (Eigen::Index k = 0; k < count; ++k) {
    st.x.middleCols(k * m, m) = samples[k].x;
    st.y.middleCols(k * m, m) = samples[k].y;
    st.r_block.block(k * m, k * m, m, m) = static_cast<double>(count) * ref.r;
  }
  st.q = ref.q;
  st.count = static_cast<int>(count);
  return st;
}

namespace detail {

// Dual consistency matrix for residual weight q and column weight r_c.
inline Qmi dual_consistency(const Matrix& x, const Matrix& y, const Matrix& q, Matrix r_c,
                            double delta) {
  const Matrix qs = symmetrized(q, "Q");
  require(is_pd(qs, 1e-12 * std::max(1.0, max_abs(qs))), Errc::SingularWeight,
          "Q must be positive definite to invert it");
  r_c = symmetrized(r_c, "R");
  if (!is_pd(r_c, 1e-12 * std::max(1.0, max_abs(r_c)))) {
    require(delta > 0.0, Errc::SingularWeight, "combined R is singular; pass delta > 0");
    r_c += delta * std::max(1.0, max_abs(r_c)) * identity(r_c.rows());
  }
  const Eigen::LDLT<Matrix> rinv(r_c);
  const Matrix ry = rinv.solve(y.transpose());  // R^{-1} Y'
  const Matrix rx = rinv.solve(x.transpose());  // R^{-1} X'
  const Eigen::Index p = y.rows();
  const Eigen::Index n = x.rows();
  Matrix m(p + n, p + n);
  m.topLeftCorner(p, p) = qs.ldlt().solve(identity(p)) - y * ry;
  m.topRightCorner(p, n) = y * rx;
  m.bottomLeftCorner(n, p) = x * ry;
  m.bottomRightCorner(n, n) = -x * rx;
  return Qmi(p, n, 0.5 * (m + m.transpose()), Orientation::Dual);
}

}  // namespace detail

/// Dual QMI of all theta consistent with the stacked bound. A singular R is
/// replaced by R + delta*max(1,|R|) I, which only enlarges the set.
inline Qmi consistency_set_dual(const StackedSample& st, double delta = 1e-9) {
  return detail::dual_consistency(st.x, st.y, st.q, st.r_block, delta);
}

namespace detail {

// Closed-form dualization of the stacked dual set. Block inversion of
// M gives the ellipsoid
//   { theta : P^{-1} - (theta - theta_ls)' S^{-1} (theta - theta_ls) >= 0 }
// with P = X R_c^{-1} X', theta_ls = Y R_c^{-1} X' P^{-1}, E = Y - theta_ls X and
// S = Q^{-1} - E R_c^{-1} E'. Unlike inverting M directly this stays accurate
// when R_c is tiny.
inline Qmi primal_from_stacked(const Matrix& x, const Matrix& y, const Matrix& q, Matrix r_c,
                               double delta) {
  const Matrix qs = symmetrized(q, "Q");
  require(is_pd(qs, 1e-12 * std::max(1.0, max_abs(qs))), Errc::SingularWeight,
          "Q must be positive definite to invert it");
  r_c = symmetrized(r_c, "R");
  if (!is_pd(r_c, 1e-12 * std::max(1.0, max_abs(r_c)))) {
    require(delta > 0.0, Errc::SingularWeight, "combined R is singular; pass delta > 0");
    r_c += delta * std::max(1.0, max_abs(r_c)) * identity(r_c.rows());
  }
  require(has_full_row_rank(x), Errc::RankDeficient,
          "stacked regressor " + shape_of(x) + " lacks full row rank");
  // Whitening L^{-1} with R_c = L L' turns the weighted problem into plain least squares.
  const Eigen::LLT<Matrix> llt(r_c);
  const Matrix xw = llt.matrixL().solve(x.transpose());  // L^{-1} X'
  const Matrix yw = llt.matrixL().solve(y.transpose());  // L^{-1} Y'
  const Eigen::ColPivHouseholderQR<Matrix> qr(xw);
  const Matrix theta_ls = qr.solve(yw).transpose();
  const Matrix ew = yw - xw * theta_ls.transpose();      // L^{-1} E'
  const Matrix s_mat = qs.ldlt().solve(identity(qs.rows())) - ew.transpose() * ew;
  const Matrix s_sym = 0.5 * (s_mat + s_mat.transpose());
  require(is_pd(s_sym, 1e-12 * std::max(1.0, max_abs(s_sym))), Errc::WrongInertia,
          "data are inconsistent with the disturbance bound (empty consistency set)");
  const Matrix p_mat = xw.transpose() * xw;
  const Matrix p_inv = p_mat.ldlt().solve(identity(p_mat.rows()));
  const Matrix weight = s_sym.ldlt().solve(identity(s_sym.rows()));
  return from_center_shape(0.5 * (weight + weight.transpose()), 0.5 * (p_inv + p_inv.transpose()),
                           theta_ls);
}

}  // namespace detail

/// Bounded primal prior from the stacked data; equals
/// dualize(consistency_set_dual(stack_samples(samples))).
inline Qmi prior_from_data(std::span<const RegressionSample> samples, double delta = 1e-9) {
  const StackedSample st = stack_samples(samples);
  return detail::primal_from_stacked(st.x, st.y, st.q, st.r_block, delta);
}

/// Per-sample dual QMIs combined with fixed weights w_k (default 1/N) and then
/// dualized. Equal weights 1/N reproduce prior_from_data.
inline Qmi informativity_prior(std::span<const RegressionSample> samples,
                               std::optional<std::vector<double>> weights = std::nullopt,
                               double delta = 1e-9) {
  require(!samples.empty(), Errc::InvalidArgument, "no samples");
  const auto count = samples.size();
  const std::vector<double> w = weights.value_or(std::vector<double>(count, 1.0 / count));
  require(w.size() == count, Errc::DimensionMismatch, "one weight per sample required");
  // sum_k w_k M_k is the stacked matrix with Q / sum(w) and R_c = blockdiag(R_k / w_k);
  // samples with zero weight drop out.
  const RegressionSample& ref = samples.front();
  ref.validate();
  double total = 0.0;
  Eigen::Index cols = 0;
  for (std::size_t k = 0; k < count; ++k) {
    require(w[k] >= 0.0, Errc::NegativeMultiplier, "negative informativity weight");
    samples[k].validate();
    require(samples[k].n() == ref.n() && samples[k].p() == ref.p() &&
                max_abs(samples[k].q - ref.q) <= 1e-12 * std::max(1.0, max_abs(ref.q)),
            Errc::HeterogeneousSamples, "samples differ in dimensions or Q");
    if (w[k] > 0.0) {
      total += w[k];
      cols += samples[k].m();
    }
  }
  require(total > 0.0, Errc::InvalidArgument, "all informativity weights are zero");
  Matrix x(ref.n(), cols), y(ref.p(), cols), r_c = Matrix::Zero(cols, cols);
  Eigen::Index at = 0;
  for (std::size_t k = 0; k < count; ++k) {
    if (w[k] == 0.0) continue;
    const Eigen::Index m = samples[k].m();
    x.middleCols(at, m) = samples[k].x;
    y.middleCols(at, m) = samples[k].y;
    r_c.block(at, at, m, m) = samples[k].r / w[k];
    at += m;
  }
  return detail::primal_from_stacked(x, y, ref.q / total, r_c, delta);
}

}  // namespace qmiest
