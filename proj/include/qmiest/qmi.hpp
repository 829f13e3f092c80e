#pragma once

// Quadratic matrix inequality (QMI) sets.
//
// A primal QMI with dimensions (p, n) and partitioned matrix
//
//       Pi = [ Pi11  Pi12 ]   Pi11: p x p,  Pi12: p x n,  Pi22: n x n
//            [ Pi12' Pi22 ]
//
// is the set { theta in R^{p x n} : [theta; I_n]' Pi [theta; I_n] >= 0 }.
//
// A dual QMI with the same dimensions describes theta through its transpose:
// its matrix M is partitioned with a leading p x p block and the set is
// { theta in R^{p x n} : [I_p; theta']' M [I_p; theta'] > 0 } (strict).
// For nonsingular Pi with inertia (p negative, n positive), the primal set
// (strict interior) equals the dual set with M = -K Pi^{-1} K, where
// K = diag(-I_p, I_n).

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qmiest/errors.hpp"
#include "qmiest/matops.hpp"

namespace qmiest {

enum class Orientation { Primal, Dual };

constexpr std::string_view to_string(Orientation o) {
  return o == Orientation::Primal ? "primal" : "dual";
}

class Qmi {
 public:
  Qmi() = default;

  Qmi(Eigen::Index p, Eigen::Index n, const Matrix& pi, Orientation orientation = Orientation::Primal)
      : p_(p), n_(n), orientation_(orientation) {
    require(p >= 0 && n >= 0, Errc::DimensionMismatch, "negative QMI dimension");
    require(pi.rows() == p + n && pi.cols() == p + n, Errc::DimensionMismatch,
            "QMI matrix must be " + std::to_string(p + n) + "x" + std::to_string(p + n) +
                ", got " + shape_of(pi));
    pi_ = symmetrized(pi, "QMI matrix");
  }

  [[nodiscard]] Eigen::Index p() const { return p_; }
  [[nodiscard]] Eigen::Index n() const { return n_; }
  [[nodiscard]] Orientation orientation() const { return orientation_; }
  [[nodiscard]] const Matrix& matrix() const { return pi_; }

  [[nodiscard]] Matrix pi11() const { return pi_.topLeftCorner(p_, p_); }
  [[nodiscard]] Matrix pi12() const { return pi_.topRightCorner(p_, n_); }
  [[nodiscard]] Matrix pi22() const { return pi_.bottomRightCorner(n_, n_); }

  /// Variable shape: both orientations describe p x n matrices theta.
  [[nodiscard]] bool fits(const Matrix& theta) const {
    return theta.rows() == p_ && theta.cols() == n_;
  }

 private:
  Eigen::Index p_ = 0;
  Eigen::Index n_ = 0;
  Matrix pi_;
  Orientation orientation_ = Orientation::Primal;
};

/// Nonnegative S-procedure weights: taus for priors, lambdas for samples.
struct MultiplierVector {
  std::vector<double> taus;
  std::vector<double> lambdas;

  [[nodiscard]] std::size_t size() const { return taus.size() + lambdas.size(); }

  [[nodiscard]] std::vector<double> flattened() const {
    std::vector<double> out(taus);
    out.insert(out.end(), lambdas.begin(), lambdas.end());
    return out;
  }
};

/// Primal: theta' Pi11 theta + theta' Pi12 + Pi12' theta + Pi22 (n x n).
/// Dual:   M11 + M12 theta' + theta M12' + theta M22 theta'   (p x p).
inline Matrix evaluate(const Qmi& q, const Matrix& theta) {
  require(q.fits(theta), Errc::DimensionMismatch,
          "theta is " + shape_of(theta) + ", QMI expects " + std::to_string(q.p()) + "x" +
              std::to_string(q.n()));
  Matrix out;
  if (q.orientation() == Orientation::Primal) {
    const Matrix cross = theta.transpose() * q.pi12();
    out = theta.transpose() * q.pi11() * theta + cross + cross.transpose() + q.pi22();
  } else {
    const Matrix cross = q.pi12() * theta.transpose();
    out = q.pi11() + cross + cross.transpose() + theta * q.pi22() * theta.transpose();
  }
  return 0.5 * (out + out.transpose());
}

/// Primal sets use the closed inequality (min eig >= -tol); dual sets are
/// strict and use min eig > -tol.
inline bool contains(const Qmi& q, const Matrix& theta, double tol = 0.0) {
  const double lo = min_eigenvalue(evaluate(q, theta));
  return q.orientation() == Orientation::Primal ? lo >= -tol : lo > -tol;
}

/// { theta : S - (theta - center)' Q (theta - center) >= 0 }.
inline Qmi from_center_shape(const Matrix& weight, const Matrix& shape, const Matrix& center) {
  const Matrix q = symmetrized(weight, "weight Q");
  const Matrix s = symmetrized(shape, "shape S");
  require(center.rows() == q.rows() && center.cols() == s.rows(), Errc::DimensionMismatch,
          "center " + shape_of(center) + " incompatible with Q " + shape_of(q) + " and S " +
              shape_of(s));
  require(is_psd(q, 1e-12 * std::max(1.0, max_abs(q))), Errc::NotPsd, "weight Q is not PSD");
  const Eigen::Index p = q.rows();
  const Eigen::Index n = s.rows();
  Matrix pi(p + n, p + n);
  pi.topLeftCorner(p, p) = -q;
  pi.topRightCorner(p, n) = q * center;
  pi.bottomLeftCorner(n, p) = center.transpose() * q;
  pi.bottomRightCorner(n, n) = s - center.transpose() * q * center;
  return Qmi(p, n, pi);
}

/// How the ball radius parameter is read: sigma_max(theta - c) <= beta, or
/// the literal "<= beta^2" form.
enum class RadiusConvention { Radius, Squared };

inline Qmi ball_prior(const Matrix& center, double beta,
                      RadiusConvention convention = RadiusConvention::Radius) {
  require(beta > 0.0, Errc::InvalidArgument, "ball radius must be positive");
  const double radius = convention == RadiusConvention::Radius ? beta : beta * beta;
  return from_center_shape(identity(center.rows()),
                           radius * radius * identity(center.cols()), center);
}

namespace detail {
inline Matrix sign_flip(Eigen::Index p, Eigen::Index n) {
  Matrix k = identity(p + n);
  k.topLeftCorner(p, p) *= -1.0;
  return k;
}
}  // namespace detail

/// Dualization: swaps orientation, returning -K Pi^{-1} K.
inline Qmi dualize(const Qmi& q) {
  const Matrix& pi = q.matrix();
  const Eigen::Index p = q.p();
  const Eigen::Index n = q.n();
  const double scale = std::max(max_abs(pi), 1e-300);
  const Inertia in = inertia(pi, 1e-9 * scale);
  require(in.zero == 0, Errc::Singular, "QMI matrix has eigenvalues within 1e-9*|Pi| of zero");
  const Inertia expected = q.orientation() == Orientation::Primal
                               ? Inertia{static_cast<int>(p), 0, static_cast<int>(n)}
                               : Inertia{static_cast<int>(n), 0, static_cast<int>(p)};
  require(in == expected, Errc::WrongInertia,
          "inertia (" + std::to_string(in.negative) + "," + std::to_string(in.zero) + "," +
              std::to_string(in.positive) + ") does not match (" +
              std::to_string(expected.negative) + ",0," + std::to_string(expected.positive) + ")");
  const Matrix k = detail::sign_flip(p, n);
  const Matrix inv = pi.ldlt().solve(identity(p + n));
  const Matrix out = -(k * inv * k);
  return Qmi(p, n, 0.5 * (out + out.transpose()),
             q.orientation() == Orientation::Primal ? Orientation::Dual : Orientation::Primal);
}

/// The same dual set written as a primal-layout form in phi = theta':
/// { phi in R^{n x p} : [phi; I_p]' T [phi; I_p] > 0 } with T = J M J'.
inline Matrix transposed_layout(const Qmi& dual) {
  require(dual.orientation() == Orientation::Dual, Errc::InvalidArgument,
          "transposed_layout expects a dual QMI");
  const Eigen::Index p = dual.p();
  const Eigen::Index n = dual.n();
  Matrix t(p + n, p + n);
  t.topLeftCorner(n, n) = dual.matrix().bottomRightCorner(n, n);
  t.topRightCorner(n, p) = dual.matrix().bottomLeftCorner(n, p);
  t.bottomLeftCorner(p, n) = dual.matrix().topRightCorner(p, n);
  t.bottomRightCorner(p, p) = dual.matrix().topLeftCorner(p, p);
  return t;
}

/// sum tau_i Pi_i (priors first) + sum lambda_k Pi_k (samples).
inline Qmi nonneg_combination(std::span<const Qmi> priors, std::span<const Qmi> samples,
                              const MultiplierVector& mult) {
  require(mult.taus.size() == priors.size() && mult.lambdas.size() == samples.size(),
          Errc::DimensionMismatch, "multiplier count does not match QMI count");
  require(!priors.empty() || !samples.empty(), Errc::InvalidArgument, "no QMIs to combine");
  const Qmi& ref = priors.empty() ? samples.front() : priors.front();
  Matrix sum = Matrix::Zero(ref.p() + ref.n(), ref.p() + ref.n());
  auto accumulate = [&](std::span<const Qmi> qs, const std::vector<double>& ws) {
    for (std::size_t i = 0; i < qs.size(); ++i) {
      require(qs[i].p() == ref.p() && qs[i].n() == ref.n() &&
                  qs[i].orientation() == ref.orientation(),
              Errc::DimensionMismatch, "QMIs differ in dimension or orientation");
      require(ws[i] >= 0.0, Errc::NegativeMultiplier,
              "multiplier " + std::to_string(ws[i]) + " is negative");
      sum += ws[i] * qs[i].matrix();
    }
  };
  accumulate(priors, mult.taus);
  accumulate(samples, mult.lambdas);
  return Qmi(ref.p(), ref.n(), sum, ref.orientation());
}

inline Qmi nonneg_combination(std::span<const Qmi> qmis, std::span<const double> weights) {
  MultiplierVector mult;
  mult.taus.assign(weights.begin(), weights.end());
  return nonneg_combination(qmis, std::span<const Qmi>{}, mult);
}

/// Center -Pi11^{-1} Pi12 when Pi11 < 0, otherwise empty (unbounded set).
inline std::optional<Matrix> bounded_center(const Qmi& q) {
  require(q.orientation() == Orientation::Primal, Errc::InvalidArgument,
          "bounded_center expects a primal QMI");
  const Matrix pi11 = q.pi11();
  if (q.p() == 0) return Matrix(0, q.n());
  const double scale = std::max(1.0, max_abs(q.matrix()));
  if (max_eigenvalue(pi11) >= -1e-12 * scale) return std::nullopt;
  return Matrix(-pi11.ldlt().solve(q.pi12()));
}

inline bool is_bounded(const Qmi& q) { return bounded_center(q).has_value(); }

}  // namespace qmiest
