#pragma once

// Dense real-matrix primitives shared by every other module.

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "qmiest/errors.hpp"

namespace qmiest {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace tol {
/// sigma_min > kRank * max(1, sigma_max) declares full rank.
inline constexpr double kRank = 1e-9;
/// Relative asymmetry tolerated before symmetrization.
inline constexpr double kSymmetry = 1e-8;
/// Accuracy demanded of G X = I for a left inverse.
inline constexpr double kLeftInverse = 1e-10;
}  // namespace tol

struct Inertia {
  int negative = 0;
  int zero = 0;
  int positive = 0;

  friend bool operator==(const Inertia&, const Inertia&) = default;
};

struct SingularValueRange {
  double min = 0.0;
  double max = 0.0;
};

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_square(const Matrix& m, const char* what) {
  require(m.rows() == m.cols(), Errc::DimensionMismatch,
          std::string(what) + " must be square, got " + shape_of(m));
}

/// Returns (M + M^T)/2. Asymmetry beyond kSymmetry * max(1, |M|_max) is an error.
inline Matrix symmetrized(const Matrix& m, const char* what = "matrix") {
  require_square(m, what);
  const double asym = max_abs(m - m.transpose());
  require(asym <= tol::kSymmetry * std::max(1.0, max_abs(m)), Errc::NotSymmetric,
          std::string(what) + " is not symmetric (asymmetry " + std::to_string(asym) + ")");
  return 0.5 * (m + m.transpose());
}

inline Vector sym_eigenvalues(const Matrix& m) {
  if (m.size() == 0) return Vector(0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

inline double min_eigenvalue(const Matrix& m) {
  const Vector ev = sym_eigenvalues(m);
  return ev.size() == 0 ? 0.0 : ev.minCoeff();
}

inline double max_eigenvalue(const Matrix& m) {
  const Vector ev = sym_eigenvalues(m);
  return ev.size() == 0 ? 0.0 : ev.maxCoeff();
}

inline bool is_psd(const Matrix& m, double tol = 0.0) { return min_eigenvalue(m) >= -tol; }

inline bool is_pd(const Matrix& m, double tol = 0.0) { return min_eigenvalue(m) > tol; }

inline SingularValueRange extremal_singular_values(const Matrix& m) {
  if (m.size() == 0) return {};
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& s = svd.singularValues();
  return {s.minCoeff(), s.maxCoeff()};
}

inline double sigma_max(const Matrix& m) { return extremal_singular_values(m).max; }

inline bool has_full_column_rank(const Matrix& m) {
  if (m.cols() > m.rows()) return false;
  if (m.cols() == 0) return true;
  const auto s = extremal_singular_values(m);
  return s.min > tol::kRank * std::max(1.0, s.max);
}

inline bool has_full_row_rank(const Matrix& m) { return has_full_column_rank(m.transpose()); }

/// Left inverse G = X^+ with G X = I, computed from the SVD.
inline Matrix left_pinv(const Matrix& x) {
  require(has_full_column_rank(x), Errc::RankDeficient,
          "regressor " + shape_of(x) + " does not have full column rank");
  if (x.cols() == 0) return Matrix(0, x.rows());
  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector inv = svd.singularValues().cwiseInverse();
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Right inverse E^+ with E E^+ = I for a full-row-rank E.
inline Matrix right_pinv(const Matrix& e) {
  require(has_full_row_rank(e), Errc::RankDeficient,
          "matrix " + shape_of(e) + " does not have full row rank");
  return left_pinv(e.transpose()).transpose();
}

/// G0 = I - X G, the projector onto the complement of range(X).
inline Matrix complement_projector(const Matrix& x, const Matrix& g) {
  require(g.rows() == x.cols() && g.cols() == x.rows(), Errc::DimensionMismatch,
          "left inverse shape " + shape_of(g) + " incompatible with " + shape_of(x));
  const Matrix gx = g * x;
  const double err = max_abs(gx - Matrix::Identity(gx.rows(), gx.cols()));
  require(err <= 1e-8, Errc::InconsistentInverse,
          "G X differs from identity by " + std::to_string(err));
  return Matrix::Identity(x.rows(), x.rows()) - x * g;
}

/// Symmetric PSD square root; eigenvalues in [-tol, 0) are clipped.
inline Matrix psd_sqrt(const Matrix& m, double tol = 1e-10) {
  const Matrix s = symmetrized(m, "psd_sqrt argument");
  if (s.size() == 0) return s;
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  const Vector& ev = es.eigenvalues();
  require(ev.minCoeff() >= -tol, Errc::NotPsd,
          "matrix has eigenvalue " + std::to_string(ev.minCoeff()) + " below -tol");
  const Vector root = ev.cwiseMax(0.0).cwiseSqrt();
  const Matrix r = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (r + r.transpose());
}

inline Inertia inertia(const Matrix& m, double tol) {
  Inertia out;
  const Vector ev = sym_eigenvalues(m);
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol) {
      ++out.negative;
    } else if (ev(i) > tol) {
      ++out.positive;
    } else {
      ++out.zero;
    }
  }
  return out;
}

inline Matrix block_diag(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

inline Matrix identity(Eigen::Index n) { return Matrix::Identity(n, n); }

inline Matrix zeros(Eigen::Index r, Eigen::Index c) { return Matrix::Zero(r, c); }

inline Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }

}  // namespace qmiest
