#pragma once

// Solver-agnostic LMI problem description plus the single conic backend
// (Clarabel, an interior-point solver, reached through a small C ABI shim).
//
// Every decision variable is a scalar. Matrix variables are views onto blocks
// of scalars:
//   * free matrices use column-major order;
//   * symmetric matrices use upper-triangular column order
//     (0,0), (0,1), (1,1), (0,2), (1,2), (2,2), ... where an off-diagonal
//     scalar v encodes S(i,j) = S(j,i) = v / sqrt(2), so that the Euclidean
//     inner product of the scalars equals the trace inner product.
// Constraints are affine symmetric matrix expressions required to be PSD,
// scalar lower bounds and scalar linear equalities. The objective is linear
// and minimized.

#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>

#include "qmiest/errors.hpp"
#include "qmiest/matops.hpp"

#include "qmiest_clarabel.h"

namespace qmiest::sdp {

/// Affine matrix expression: constant + sum_k x_k * coefficient_k.
class AffineMatrix {
 public:
  AffineMatrix() = default;
  AffineMatrix(Eigen::Index rows, Eigen::Index cols) : constant_(Matrix::Zero(rows, cols)) {}
  explicit AffineMatrix(Matrix constant) : constant_(std::move(constant)) {}

  static AffineMatrix variable_entry(Eigen::Index rows, Eigen::Index cols, int var,
                                     const Matrix& coefficient) {
    AffineMatrix out(rows, cols);
    out.terms_.emplace(var, coefficient);
    return out;
  }

  [[nodiscard]] Eigen::Index rows() const { return constant_.rows(); }
  [[nodiscard]] Eigen::Index cols() const { return constant_.cols(); }
  [[nodiscard]] const Matrix& constant() const { return constant_; }
  [[nodiscard]] const std::map<int, Matrix>& terms() const { return terms_; }

  AffineMatrix& operator+=(const AffineMatrix& o) {
    check_same_shape(o);
    constant_ += o.constant_;
    for (const auto& [var, coef] : o.terms_) {
      auto it = terms_.find(var);
      if (it == terms_.end()) {
        terms_.emplace(var, coef);
      } else {
        it->second += coef;
      }
    }
    return *this;
  }
  AffineMatrix& operator-=(const AffineMatrix& o) { return *this += (-1.0) * o; }
  AffineMatrix& operator*=(double s) {
    constant_ *= s;
    for (auto& [var, coef] : terms_) coef *= s;
    return *this;
  }

  friend AffineMatrix operator+(AffineMatrix a, const AffineMatrix& b) { return a += b; }
  friend AffineMatrix operator-(AffineMatrix a, const AffineMatrix& b) { return a -= b; }
  friend AffineMatrix operator+(AffineMatrix a, const Matrix& b) { return a += AffineMatrix(b); }
  friend AffineMatrix operator-(AffineMatrix a, const Matrix& b) { return a -= AffineMatrix(b); }
  friend AffineMatrix operator*(double s, AffineMatrix a) { return a *= s; }
  friend AffineMatrix operator-(AffineMatrix a) { return a *= -1.0; }

  friend AffineMatrix operator*(const Matrix& left, const AffineMatrix& a) {
    require(left.cols() == a.rows(), Errc::DimensionMismatch, "affine left product");
    AffineMatrix out(left * a.constant_);
    for (const auto& [var, coef] : a.terms_) out.terms_.emplace(var, left * coef);
    return out;
  }
  friend AffineMatrix operator*(const AffineMatrix& a, const Matrix& right) {
    require(a.cols() == right.rows(), Errc::DimensionMismatch, "affine right product");
    AffineMatrix out(a.constant_ * right);
    for (const auto& [var, coef] : a.terms_) out.terms_.emplace(var, coef * right);
    return out;
  }

  [[nodiscard]] AffineMatrix transpose() const {
    AffineMatrix out(Matrix(constant_.transpose()));
    for (const auto& [var, coef] : terms_) out.terms_.emplace(var, coef.transpose());
    return out;
  }

  [[nodiscard]] Matrix evaluate(const Vector& x) const {
    Matrix out = constant_;
    for (const auto& [var, coef] : terms_) {
      require(var < x.size(), Errc::MalformedProblem, "assignment misses a variable");
      out += x(var) * coef;
    }
    return out;
  }

  /// Places `a` into a larger zero expression at (row, col).
  [[nodiscard]] static AffineMatrix embed(const AffineMatrix& a, Eigen::Index rows,
                                          Eigen::Index cols, Eigen::Index row,
                                          Eigen::Index col) {
    require(row + a.rows() <= rows && col + a.cols() <= cols, Errc::DimensionMismatch,
            "block does not fit");
    AffineMatrix out(rows, cols);
    out.constant_.block(row, col, a.rows(), a.cols()) = a.constant_;
    for (const auto& [var, coef] : a.terms_) {
      Matrix big = Matrix::Zero(rows, cols);
      big.block(row, col, a.rows(), a.cols()) = coef;
      out.terms_.emplace(var, std::move(big));
    }
    return out;
  }

 private:
  void check_same_shape(const AffineMatrix& o) const {
    require(rows() == o.rows() && cols() == o.cols(), Errc::DimensionMismatch,
            "affine expression shapes differ: " + shape_of(constant_) + " vs " +
                shape_of(o.constant_));
  }

  Matrix constant_;
  std::map<int, Matrix> terms_;
};

/// Assembles a block matrix from a grid of expressions. Empty cells are zero;
/// every row of blocks must define its height and every column its width
/// through at least one non-empty cell.
class BlockBuilder {
 public:
  BlockBuilder(std::vector<Eigen::Index> row_sizes, std::vector<Eigen::Index> col_sizes)
      : rows_(std::move(row_sizes)), cols_(std::move(col_sizes)) {}

  void set(std::size_t r, std::size_t c, AffineMatrix block) {
    require(r < rows_.size() && c < cols_.size(), Errc::DimensionMismatch, "block index");
    require(block.rows() == rows_[r] && block.cols() == cols_[c], Errc::DimensionMismatch,
            "block (" + std::to_string(r) + "," + std::to_string(c) + ") has shape " +
                shape_of(block.constant()));
    cells_.emplace_back(r, c, std::move(block));
  }
  void set(std::size_t r, std::size_t c, const Matrix& block) { set(r, c, AffineMatrix(block)); }

  /// Sets (r, c) and its mirror (c, r) = block^T.
  void set_sym(std::size_t r, std::size_t c, const AffineMatrix& block) {
    set(r, c, block);
    if (r != c) set(c, r, block.transpose());
  }
  void set_sym(std::size_t r, std::size_t c, const Matrix& block) {
    set_sym(r, c, AffineMatrix(block));
  }

  [[nodiscard]] AffineMatrix build() const {
    std::vector<Eigen::Index> roff(rows_.size() + 1, 0), coff(cols_.size() + 1, 0);
    for (std::size_t i = 0; i < rows_.size(); ++i) roff[i + 1] = roff[i] + rows_[i];
    for (std::size_t j = 0; j < cols_.size(); ++j) coff[j + 1] = coff[j] + cols_[j];
    AffineMatrix out(roff.back(), coff.back());
    for (const auto& [r, c, block] : cells_) {
      out += AffineMatrix::embed(block, roff.back(), coff.back(), roff[r], coff[c]);
    }
    return out;
  }

 private:
  std::vector<Eigen::Index> rows_, cols_;
  std::vector<std::tuple<std::size_t, std::size_t, AffineMatrix>> cells_;
};

struct ScalarVariable {
  std::string name;
  double lower = -std::numeric_limits<double>::infinity();
};

struct MatrixVariable {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  bool symmetric = false;
  bool psd = false;
  int first = 0;  // index of the first scalar
};

struct Lmi {
  std::string name;
  AffineMatrix expr;  // required PSD
};

struct LinearEquality {
  std::string name;
  std::map<int, double> coefficients;
  double rhs = 0.0;
};

class LmiProblem {
 public:
  int add_scalar(std::string name,
                 double lower = -std::numeric_limits<double>::infinity()) {
    scalars_.push_back({std::move(name), lower});
    return static_cast<int>(scalars_.size()) - 1;
  }

  /// Returns an expression for a 1x1 variable.
  [[nodiscard]] AffineMatrix scalar_expr(int var) const {
    return AffineMatrix::variable_entry(1, 1, var, Matrix::Ones(1, 1));
  }

  AffineMatrix add_matrix(std::string name, Eigen::Index rows, Eigen::Index cols) {
    const int first = static_cast<int>(scalars_.size());
    AffineMatrix out(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) {
        Matrix e = Matrix::Zero(rows, cols);
        e(i, j) = 1.0;
        const int v = add_scalar(name + "(" + std::to_string(i) + "," + std::to_string(j) + ")");
        out += AffineMatrix::variable_entry(rows, cols, v, e);
      }
    }
    matrices_.push_back({std::move(name), rows, cols, false, false, first});
    return out;
  }

  AffineMatrix add_symmetric(std::string name, Eigen::Index dim, bool psd) {
    const int first = static_cast<int>(scalars_.size());
    AffineMatrix out(dim, dim);
    const double off = 1.0 / std::sqrt(2.0);
    for (Eigen::Index j = 0; j < dim; ++j) {
      for (Eigen::Index i = 0; i <= j; ++i) {
        Matrix e = Matrix::Zero(dim, dim);
        if (i == j) {
          e(i, i) = 1.0;
        } else {
          e(i, j) = off;
          e(j, i) = off;
        }
        const int v = add_scalar(name + "(" + std::to_string(i) + "," + std::to_string(j) + ")");
        out += AffineMatrix::variable_entry(dim, dim, v, e);
      }
    }
    matrices_.push_back({name, dim, dim, true, psd, first});
    if (psd) add_lmi(name + " >= 0", out);
    return out;
  }

  void add_lmi(std::string name, AffineMatrix expr) {
    require(expr.rows() == expr.cols(), Errc::MalformedProblem, "LMI '" + name + "' not square");
    const double scale = std::max(1.0, max_abs(expr.constant()));
    auto check_sym = [&](const Matrix& m) {
      require(max_abs(m - m.transpose()) <= 1e-9 * std::max(scale, max_abs(m)),
              Errc::MalformedProblem, "LMI '" + name + "' is not symmetric");
    };
    check_sym(expr.constant());
    for (const auto& [var, coef] : expr.terms()) {
      require(var >= 0 && var < num_scalars(), Errc::MalformedProblem,
              "LMI '" + name + "' references an undeclared variable");
      check_sym(coef);
    }
    lmis_.push_back({std::move(name), std::move(expr)});
  }

  void add_equality(std::string name, std::map<int, double> coefficients, double rhs) {
    for (const auto& [var, c] : coefficients) {
      require(var >= 0 && var < num_scalars(), Errc::MalformedProblem,
              "equality '" + name + "' references an undeclared variable");
    }
    equalities_.push_back({std::move(name), std::move(coefficients), rhs});
  }

  void set_lower_bound(int var, double lower) { scalars_.at(var).lower = lower; }

  void minimize(int var, double coefficient = 1.0) { objective_[var] += coefficient; }

  /// Adds trace(<weight, expr>) to the objective for a square expression.
  void minimize_trace(const AffineMatrix& expr, const Matrix& weight) {
    require(weight.rows() == expr.rows() && weight.cols() == expr.cols(),
            Errc::MalformedProblem, "objective weight shape");
    for (const auto& [var, coef] : expr.terms()) {
      objective_[var] += (weight.transpose() * coef).trace();
    }
  }

  [[nodiscard]] int num_scalars() const { return static_cast<int>(scalars_.size()); }
  [[nodiscard]] const std::vector<ScalarVariable>& scalars() const { return scalars_; }
  [[nodiscard]] const std::vector<MatrixVariable>& matrices() const { return matrices_; }
  [[nodiscard]] const std::vector<Lmi>& lmis() const { return lmis_; }
  [[nodiscard]] const std::vector<LinearEquality>& equalities() const { return equalities_; }
  [[nodiscard]] const std::map<int, double>& objective() const { return objective_; }

  [[nodiscard]] double objective_value(const Vector& x) const {
    double v = 0.0;
    for (const auto& [var, c] : objective_) v += c * x(var);
    return v;
  }

 private:
  std::vector<ScalarVariable> scalars_;
  std::vector<MatrixVariable> matrices_;
  std::vector<Lmi> lmis_;
  std::vector<LinearEquality> equalities_;
  std::map<int, double> objective_;
};

enum class Status { Optimal, Infeasible, Unbounded, NumericalTrouble };

constexpr std::string_view to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "Optimal";
    case Status::Infeasible: return "Infeasible";
    case Status::Unbounded: return "Unbounded";
    case Status::NumericalTrouble: return "NumericalTrouble";
  }
  return "Unknown";
}

struct SdpSolution {
  Status status = Status::NumericalTrouble;
  Vector values;
  double objective_value = std::numeric_limits<double>::quiet_NaN();
  /// Worst violation of any constraint, re-evaluated outside the solver.
  double max_constraint_violation = std::numeric_limits<double>::infinity();
  std::string solver_status;
  int iterations = 0;

  [[nodiscard]] bool optimal() const { return status == Status::Optimal; }
  [[nodiscard]] Matrix value(const AffineMatrix& expr) const { return expr.evaluate(values); }
  [[nodiscard]] double value(int var) const { return values(var); }
};

struct Settings {
  double tol_feas = 1e-8;
  double tol_gap_abs = 1e-8;
  double tol_gap_rel = 1e-8;
  double tol_infeas = 1e-8;
  int max_iters = 500;
  double time_limit_secs = 0.0;  // 0: none
  bool verbose = false;
  /// A solution reported optimal must re-check within this violation.
  double accept_violation = 1e-6;
};

/// Smallest eigenvalue over every constraint evaluated at `x`: LMIs, lower
/// bounds (x - l) and equalities (-|a^T x - b|).
inline double feasibility_margin(const LmiProblem& p, const Vector& x) {
  require(x.size() == p.num_scalars(), Errc::MalformedProblem,
          "assignment has " + std::to_string(x.size()) + " entries, problem has " +
              std::to_string(p.num_scalars()));
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& lmi : p.lmis()) {
    margin = std::min(margin, min_eigenvalue(lmi.expr.evaluate(x)));
  }
  for (int i = 0; i < p.num_scalars(); ++i) {
    const double l = p.scalars()[i].lower;
    if (std::isfinite(l)) margin = std::min(margin, x(i) - l);
  }
  for (const auto& eq : p.equalities()) {
    double lhs = 0.0;
    for (const auto& [var, c] : eq.coefficients) lhs += c * x(var);
    margin = std::min(margin, -std::abs(lhs - eq.rhs));
  }
  return margin;
}

namespace detail {

inline Eigen::Index svec_size(Eigen::Index d) { return d * (d + 1) / 2; }

// The PSD triangle cone packs the upper triangle column by column with
// off-diagonals scaled by sqrt(2), the same layout as symmetric variables.
template <typename Fn>
inline void for_each_svec_entry(Eigen::Index d, Fn&& fn) {
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) fn(k++, i, j, i == j ? 1.0 : std::sqrt(2.0));
  }
}

}  // namespace detail

/// Reads the backend from QMIEST_SOLVER (default and only option: "clarabel").
inline void check_solver_available() {
  const char* env = std::getenv("QMIEST_SOLVER");
  if (env == nullptr || std::string(env).empty()) return;
  const std::string name(env);
  require(name == "clarabel", Errc::SolverUnavailable,
          "solver '" + name + "' is not built into this binary (available: clarabel)");
}

inline SdpSolution solve(const LmiProblem& p, const Settings& settings = {}) {
  check_solver_available();
  const int n = p.num_scalars();
  require(n > 0, Errc::MalformedProblem, "problem has no variables");

  // Row layout: zero cone (equalities), nonnegative cone (bounds), PSD cones.
  std::vector<int> bounded;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(p.scalars()[i].lower)) bounded.push_back(i);
  }
  const Eigen::Index n_eq = static_cast<Eigen::Index>(p.equalities().size());
  const Eigen::Index n_lin = static_cast<Eigen::Index>(bounded.size());
  Eigen::Index m = n_eq + n_lin;
  for (const auto& lmi : p.lmis()) m += detail::svec_size(lmi.expr.rows());
  require(m > 0, Errc::MalformedProblem, "problem has no constraints");

  using Index = long long;
  std::vector<Eigen::Triplet<double, Index>> trip;
  Vector b = Vector::Zero(m);
  Eigen::Index row = 0;
  for (const auto& eq : p.equalities()) {
    for (const auto& [var, c] : eq.coefficients) trip.emplace_back(row, var, c);
    b(row++) = eq.rhs;
  }
  for (int var : bounded) {
    trip.emplace_back(row, var, -1.0);
    b(row++) = -p.scalars()[var].lower;
  }
  std::vector<Index> psd_dims;
  for (const auto& lmi : p.lmis()) {
    const Eigen::Index d = lmi.expr.rows();
    psd_dims.push_back(d);
    const Matrix f0 = 0.5 * (lmi.expr.constant() + lmi.expr.constant().transpose());
    detail::for_each_svec_entry(d, [&](Eigen::Index k, Eigen::Index i, Eigen::Index j, double s) {
      b(row + k) = s * f0(i, j);
    });
    for (const auto& [var, coef] : lmi.expr.terms()) {
      const Matrix fk = 0.5 * (coef + coef.transpose());
      detail::for_each_svec_entry(d, [&](Eigen::Index k, Eigen::Index i, Eigen::Index j, double s) {
        const double v = s * fk(i, j);
        if (v != 0.0) trip.emplace_back(row + k, var, -v);
      });
    }
    row += detail::svec_size(d);
  }

  Eigen::SparseMatrix<double, Eigen::ColMajor, Index> a(m, n);
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  Vector c = Vector::Zero(n);
  for (const auto& [var, coef] : p.objective()) c(var) = coef;

  QmiestClarabelSettings stgs{};
  stgs.max_iter = settings.max_iters;
  stgs.time_limit = settings.time_limit_secs;
  stgs.verbose = settings.verbose ? 1 : 0;
  stgs.tol_gap_abs = settings.tol_gap_abs;
  stgs.tol_gap_rel = settings.tol_gap_rel;
  stgs.tol_feas = settings.tol_feas;
  stgs.tol_infeas_abs = settings.tol_infeas;
  stgs.tol_infeas_rel = settings.tol_infeas;

  Vector x = Vector::Zero(n), z = Vector::Zero(m), s = Vector::Zero(m);
  QmiestClarabelResult info{};
  const int code = qmiest_clarabel_solve(
      n, m, a.outerIndexPtr(), a.innerIndexPtr(), a.valuePtr(), b.data(), c.data(), n_eq, n_lin,
      psd_dims.empty() ? nullptr : psd_dims.data(), static_cast<Index>(psd_dims.size()), &stgs,
      x.data(), z.data(), s.data(), &info);
  require(code != 8, Errc::SolverFailure, std::string("solver setup failed: ") + info.status_text);

  SdpSolution out;
  out.values = x;
  out.solver_status = info.status_text;
  out.iterations = info.iterations;
  switch (code) {
    case 0:
    case 1:
      out.status = Status::Optimal;
      break;
    case 2:
    case 4:
      out.status = Status::Infeasible;
      break;
    case 3:
    case 5:
      out.status = Status::Unbounded;
      break;
    default:
      out.status = Status::NumericalTrouble;
      break;
  }
  if (out.status == Status::Optimal || out.status == Status::NumericalTrouble) {
    out.objective_value = p.objective_value(x);
    out.max_constraint_violation = std::max(0.0, -feasibility_margin(p, x));
  }
  if (out.status == Status::Optimal &&
      out.max_constraint_violation > settings.accept_violation) {
    out.status = Status::NumericalTrouble;
  }
  return out;
}

}  // namespace qmiest::sdp
