#pragma once

// Scenario pipeline: seeded data for a known plant, the four prior sets, the
// per-sample and structural QMIs, and the prior x constraint-set table of
// certified bounds.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qmiest/analysis.hpp"
#include "qmiest/errors.hpp"
#include "qmiest/io.hpp"
#include "qmiest/matops.hpp"
#include "qmiest/prior.hpp"
#include "qmiest/qmi.hpp"
#include "qmiest/reparam.hpp"
#include "qmiest/synth.hpp"

namespace qmiest {

enum class PriorKind { Stacked, Ball, Informativity, Combined };
enum class ConstraintKind { None, Data, Prior, Combined };

inline constexpr PriorKind kAllPriors[] = {PriorKind::Stacked, PriorKind::Ball,
                                           PriorKind::Informativity, PriorKind::Combined};
inline constexpr ConstraintKind kAllConstraints[] = {ConstraintKind::None, ConstraintKind::Data,
                                                     ConstraintKind::Prior, ConstraintKind::Combined};

inline std::string to_string(PriorKind k) {
  switch (k) {
    case PriorKind::Stacked: return "stacked";
    case PriorKind::Ball: return "ball";
    case PriorKind::Informativity: return "informativity";
    case PriorKind::Combined: return "combined";
  }
  return "?";
}

inline std::string to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::None: return "none";
    case ConstraintKind::Data: return "data";
    case ConstraintKind::Prior: return "prior";
    case ConstraintKind::Combined: return "combined";
  }
  return "?";
}

inline PriorKind parse_prior_kind(const std::string& s) {
  for (auto k : kAllPriors)
    if (to_string(k) == s) return k;
  fail(Errc::Parse, "unknown prior '" + s + "' (stacked, ball, informativity, combined)");
}

inline ConstraintKind parse_constraint_kind(const std::string& s) {
  for (auto k : kAllConstraints)
    if (to_string(k) == s) return k;
  fail(Errc::Parse, "unknown constraint set '" + s + "' (none, data, prior, combined)");
}

/// sigma_max(E theta F + Gc) <= eps on one row block of Delta.
struct StructuralConstraint {
  RowBlock block = RowBlock::AB;
  Matrix e, f, gc;
  double eps = 0.0;
  std::string label;
};

struct Interval {
  double lo = 0.0, hi = 0.0;
};

struct ScenarioConfig {
  std::string name = "custom";
  Matrix a, b_p, c_y, d_yp, c_p, d_p;
  int n_samples = 10;
  double alpha_w = 0.1;  // ||w_k|| <= alpha_w (Q = I, R = alpha_w^2)
  double alpha_v = 0.1;  // ||v_k|| <= alpha_v
  double beta = 0.1;
  double ball_scale = 1.04;
  RadiusConvention radius_convention = RadiusConvention::Radius;
  bool informativity_true_center = true;
  double epsilon = 0.1;
  QhatObjective objective = QhatObjective::Trace;
  // R + R_hat = (1 + eps)^2 R, so eps is the relative deviation allowed per sample
  RhatScaling rhat_scaling = RhatScaling::Direct;
  Interval x0_range{-1.0, 1.0};
  Interval wp_range{-1.0, 1.0};
  std::vector<StructuralConstraint> structural;
  std::vector<PriorKind> priors{std::begin(kAllPriors), std::end(kAllPriors)};
  std::vector<ConstraintKind> constraints{std::begin(kAllConstraints), std::end(kAllConstraints)};
  std::uint64_t seed = 1;
  int validation_samples = 20;
  int threads = 0;  // 0: hardware concurrency

  [[nodiscard]] Eigen::Index nx() const { return a.rows(); }
  [[nodiscard]] Eigen::Index mp() const { return b_p.cols(); }
  [[nodiscard]] Eigen::Index py() const { return c_y.rows(); }

  [[nodiscard]] Matrix theta_ab() const {
    Matrix t(nx(), nx() + mp());
    t << a, b_p;
    return t;
  }
  [[nodiscard]] Matrix theta_cd() const {
    Matrix t(py(), nx() + mp());
    t << c_y, d_yp;
    return t;
  }

  void validate() const {
    require(a.rows() > 0 && a.rows() == a.cols(), Errc::DimensionMismatch, "system.A must be square");
    require(b_p.rows() == nx() && c_y.cols() == nx() && d_yp.rows() == py() &&
                d_yp.cols() == mp() && c_p.cols() == nx() && d_p.rows() == c_p.rows() &&
                d_p.cols() == mp(),
            Errc::DimensionMismatch, "system matrices have inconsistent shapes");
    require(n_samples >= 1, Errc::InvalidArgument, "data.N must be >= 1");
    require(alpha_w > 0.0 && alpha_v > 0.0, Errc::InvalidArgument, "noise radius must be > 0");
    require(beta > 0.0 && epsilon > 0.0, Errc::InvalidArgument, "beta and epsilon must be > 0");
    require(x0_range.lo <= x0_range.hi && wp_range.lo <= wp_range.hi, Errc::InvalidArgument,
            "ranges must be nonempty");
    require(!priors.empty() && !constraints.empty(), Errc::InvalidArgument,
            "select at least one prior and one constraint set");
    require(validation_samples >= 1, Errc::InvalidArgument, "run.validation_samples must be >= 1");
    for (const auto& s : structural) {
      const Eigen::Index p = s.block == RowBlock::AB ? nx() : py();
      require(s.e.cols() == p && s.f.rows() == nx() + mp() && s.gc.rows() == s.e.rows() &&
                  s.gc.cols() == s.f.cols() && s.eps > 0.0,
              Errc::DimensionMismatch, "structural constraint '" + s.label + "' has wrong shapes");
    }
  }
};

/// Which entries carry the second "sums to one" constraint of system 1.
enum class SumColumn { A, Bp };

namespace detail {

inline Matrix unit_row(Eigen::Index n, Eigen::Index i) {
  Matrix e = Matrix::Zero(1, n);
  e(0, i) = 1.0;
  return e;
}

inline Matrix unit_col(Eigen::Index n, Eigen::Index j) {
  Matrix e = Matrix::Zero(n, 1);
  e(j, 0) = 1.0;
  return e;
}

inline StructuralConstraint entry_bound(RowBlock b, Eigen::Index p, Eigen::Index n, Eigen::Index i,
                                        Eigen::Index j, double value, double eps,
                                        std::string label) {
  return {b, unit_row(p, i), unit_col(n, j), scalar_matrix(-value), eps, std::move(label)};
}

}  // namespace detail

/// The two plants of the numerical study, with their data and structural settings.
inline ScenarioConfig example_config(int which, SumColumn sum_column = SumColumn::A) {
  ScenarioConfig c;
  if (which == 1) {
    c.name = "example1";
    c.a = io::parse_matrix("0.7 0; 0.3 0.7");
    c.b_p = io::parse_matrix("1 0; 0 0");
    c.c_y = io::parse_matrix("0 1");
    c.d_yp = io::parse_matrix("0 1");
    c.c_p = identity(2);
    c.d_p = zeros(2, 2);
    c.n_samples = 50;
    c.alpha_w = c.alpha_v = 0.0005;
    c.beta = 0.15;
    c.x0_range = {-2.0, 2.0};
    c.wp_range = {-2.0, 2.0};
    using detail::entry_bound;
    // zero entries to 0.01, except the first column of B_p
    c.structural.push_back(entry_bound(RowBlock::AB, 2, 4, 0, 1, 0.0, 0.01, "A12 ~ 0"));
    c.structural.push_back(entry_bound(RowBlock::AB, 2, 4, 0, 3, 0.0, 0.01, "Bp12 ~ 0"));
    c.structural.push_back(entry_bound(RowBlock::AB, 2, 4, 1, 3, 0.0, 0.01, "Bp22 ~ 0"));
    c.structural.push_back(entry_bound(RowBlock::CD, 1, 4, 0, 0, 0.0, 0.01, "Cy11 ~ 0"));
    c.structural.push_back(entry_bound(RowBlock::CD, 1, 4, 0, 2, 0.0, 0.01, "Dyp11 ~ 0"));
    // last row of A sums to one
    c.structural.push_back({RowBlock::AB, detail::unit_row(2, 1), io::parse_matrix("1; 1; 0; 0"),
                            scalar_matrix(-1.0), 1e-3, "A21 + A22 = 1"});
    // first column sums to one (of A by default, of B_p in the other reading)
    c.structural.push_back({RowBlock::AB, io::parse_matrix("1 1"),
                            detail::unit_col(4, sum_column == SumColumn::A ? 0 : 2),
                            scalar_matrix(-1.0), 1e-3,
                            sum_column == SumColumn::A ? "A11 + A21 = 1" : "Bp11 + Bp21 = 1"});
    c.structural.push_back(entry_bound(RowBlock::AB, 2, 4, 1, 0, 0.3, 0.003, "A21 within 1%"));
  } else if (which == 2) {
    c.name = "example2";
    c.a = scalar_matrix(0.8);
    c.b_p = scalar_matrix(1.0);
    c.c_y = scalar_matrix(1.0);
    c.d_yp = scalar_matrix(0.1);
    c.c_p = scalar_matrix(1.0);
    c.d_p = scalar_matrix(0.0);
    c.n_samples = 10;
    c.alpha_w = c.alpha_v = 0.6;
    c.beta = 0.1;
    c.x0_range = {-10.0, 10.0};
    c.wp_range = {-4.0, 6.0};
    c.structural.push_back(detail::entry_bound(RowBlock::AB, 1, 2, 0, 1, 1.0, 0.01, "Bp within 1%"));
  } else {
    fail(Errc::InvalidArgument, "examples are 1 and 2, got " + std::to_string(which));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Config files

namespace detail {

inline Interval parse_interval(const std::string& v) {
  const Matrix m = io::parse_matrix(v);
  require(m.size() == 2, Errc::Parse, "interval needs two numbers, got '" + v + "'");
  return {m(0), m(1)};
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(Errc::Parse, "expected true/false, got '" + v + "'");
}

template <class T, class F>
std::vector<T> parse_list(const std::string& v, F parse_one) {
  std::vector<T> out;
  std::string cur;
  for (char ch : v + ",") {
    if (ch == ',' || ch == ' ') {
      if (!cur.empty()) out.push_back(parse_one(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return out;
}

}  // namespace detail

/// Reads the flat dotted-key grammar documented in the README. An `example`
/// key loads that example first; every other key overrides it.
inline ScenarioConfig parse_config(const io::KeyValues& kv) {
  ScenarioConfig c;
  std::set<std::string> used;
  auto get = [&](const std::string& k) -> std::optional<std::string> {
    const auto it = kv.find(k);
    if (it == kv.end()) return std::nullopt;
    used.insert(k);
    return it->second;
  };
  if (auto ex = get("example")) {
    SumColumn sc = SumColumn::A;
    if (auto s = get("example1.sum_column")) {
      require(*s == "A" || *s == "Bp", Errc::Parse, "example1.sum_column is A or Bp");
      sc = *s == "A" ? SumColumn::A : SumColumn::Bp;
    }
    c = example_config(static_cast<int>(io::parse_double(*ex, "example")), sc);
  }
  if (auto v = get("name")) c.name = *v;
  if (auto v = get("system.A")) c.a = io::parse_matrix(*v);
  if (auto v = get("system.Bp")) c.b_p = io::parse_matrix(*v);
  if (auto v = get("system.Cy")) c.c_y = io::parse_matrix(*v);
  if (auto v = get("system.Dyp")) c.d_yp = io::parse_matrix(*v);
  if (auto v = get("system.Cp")) c.c_p = io::parse_matrix(*v);
  if (auto v = get("system.Dp")) c.d_p = io::parse_matrix(*v);
  if (auto v = get("data.N")) c.n_samples = static_cast<int>(io::parse_double(*v, "data.N"));
  if (auto v = get("data.alpha")) c.alpha_w = c.alpha_v = io::parse_double(*v, "data.alpha");
  if (auto v = get("data.alpha_w")) c.alpha_w = io::parse_double(*v, "data.alpha_w");
  if (auto v = get("data.alpha_v")) c.alpha_v = io::parse_double(*v, "data.alpha_v");
  if (auto v = get("data.x0_range")) c.x0_range = detail::parse_interval(*v);
  if (auto v = get("data.wp_range")) c.wp_range = detail::parse_interval(*v);
  if (auto v = get("seed")) c.seed = static_cast<std::uint64_t>(io::parse_double(*v, "seed"));
  if (auto v = get("prior.beta")) c.beta = io::parse_double(*v, "prior.beta");
  if (auto v = get("prior.ball_scale")) c.ball_scale = io::parse_double(*v, "prior.ball_scale");
  if (auto v = get("prior.radius_convention")) {
    require(*v == "radius" || *v == "squared", Errc::Parse,
            "prior.radius_convention is radius or squared");
    c.radius_convention = *v == "radius" ? RadiusConvention::Radius : RadiusConvention::Squared;
  }
  if (auto v = get("prior.informativity_true_center")) c.informativity_true_center = detail::parse_bool(*v);
  if (auto v = get("reparam.epsilon")) c.epsilon = io::parse_double(*v, "reparam.epsilon");
  if (auto v = get("reparam.objective")) {
    require(*v == "trace" || *v == "logdet", Errc::Parse, "reparam.objective is trace or logdet");
    c.objective = *v == "trace" ? QhatObjective::Trace : QhatObjective::LogDet;
  }
  if (auto v = get("reparam.rhat_scaling")) {
    require(*v == "inverse" || *v == "direct", Errc::Parse,
            "reparam.rhat_scaling is inverse or direct");
    c.rhat_scaling = *v == "inverse" ? RhatScaling::Inverse : RhatScaling::Direct;
  }
  if (auto v = get("run.priors")) c.priors = detail::parse_list<PriorKind>(*v, parse_prior_kind);
  if (auto v = get("run.constraints"))
    c.constraints = detail::parse_list<ConstraintKind>(*v, parse_constraint_kind);
  if (auto v = get("run.validation_samples"))
    c.validation_samples = static_cast<int>(io::parse_double(*v, "run.validation_samples"));
  if (auto v = get("run.threads")) c.threads = static_cast<int>(io::parse_double(*v, "run.threads"));

  // structural.<i>.{block,E,F,Gc,eps,label}; any structural key replaces the example's list
  std::map<int, StructuralConstraint> st;
  for (const auto& [k, v] : kv) {
    if (k.rfind("structural.", 0) != 0) continue;
    used.insert(k);
    const auto dot = k.find('.', 11);
    require(dot != std::string::npos, Errc::Parse, "structural keys are structural.<i>.<field>");
    const int idx = static_cast<int>(io::parse_double(k.substr(11, dot - 11), "structural index"));
    const std::string field = k.substr(dot + 1);
    auto& s = st[idx];
    if (field == "block") {
      require(v == "AB" || v == "CD", Errc::Parse, k + " is AB or CD");
      s.block = v == "AB" ? RowBlock::AB : RowBlock::CD;
    } else if (field == "E") {
      s.e = io::parse_matrix(v);
    } else if (field == "F") {
      s.f = io::parse_matrix(v);
    } else if (field == "Gc") {
      s.gc = io::parse_matrix(v);
    } else if (field == "eps") {
      s.eps = io::parse_double(v, k);
    } else if (field == "label") {
      s.label = v;
    } else {
      fail(Errc::Parse, "unknown structural field '" + field + "'");
    }
  }
  if (!st.empty()) {
    c.structural.clear();
    for (auto& [i, s] : st) c.structural.push_back(std::move(s));
  }
  for (const auto& [k, v] : kv) {
    require(used.count(k) == 1, Errc::Parse, "unknown config key '" + k + "'");
  }
  c.validate();
  return c;
}

inline io::KeyValues config_key_values(const ScenarioConfig& c) {
  io::KeyValues kv;
  kv["name"] = c.name;
  kv["system.A"] = io::format_matrix(c.a);
  kv["system.Bp"] = io::format_matrix(c.b_p);
  kv["system.Cy"] = io::format_matrix(c.c_y);
  kv["system.Dyp"] = io::format_matrix(c.d_yp);
  kv["system.Cp"] = io::format_matrix(c.c_p);
  kv["system.Dp"] = io::format_matrix(c.d_p);
  kv["data.N"] = std::to_string(c.n_samples);
  kv["data.alpha_w"] = io::format_double(c.alpha_w);
  kv["data.alpha_v"] = io::format_double(c.alpha_v);
  kv["data.x0_range"] = io::format_double(c.x0_range.lo) + " " + io::format_double(c.x0_range.hi);
  kv["data.wp_range"] = io::format_double(c.wp_range.lo) + " " + io::format_double(c.wp_range.hi);
  kv["seed"] = std::to_string(c.seed);
  kv["prior.beta"] = io::format_double(c.beta);
  kv["prior.ball_scale"] = io::format_double(c.ball_scale);
  kv["prior.radius_convention"] = c.radius_convention == RadiusConvention::Radius ? "radius" : "squared";
  kv["prior.informativity_true_center"] = c.informativity_true_center ? "true" : "false";
  kv["reparam.epsilon"] = io::format_double(c.epsilon);
  kv["reparam.objective"] = c.objective == QhatObjective::Trace ? "trace" : "logdet";
  kv["reparam.rhat_scaling"] = c.rhat_scaling == RhatScaling::Inverse ? "inverse" : "direct";
  std::string pr, cs;
  for (auto p : c.priors) pr += (pr.empty() ? "" : ",") + to_string(p);
  for (auto k : c.constraints) cs += (cs.empty() ? "" : ",") + to_string(k);
  kv["run.priors"] = pr;
  kv["run.constraints"] = cs;
  kv["run.validation_samples"] = std::to_string(c.validation_samples);
  kv["run.threads"] = std::to_string(c.threads);
  for (std::size_t i = 0; i < c.structural.size(); ++i) {
    const auto& s = c.structural[i];
    const std::string p = "structural." + std::to_string(i) + ".";
    kv[p + "block"] = s.block == RowBlock::AB ? "AB" : "CD";
    kv[p + "E"] = io::format_matrix(s.e);
    kv[p + "F"] = io::format_matrix(s.f);
    kv[p + "Gc"] = io::format_matrix(s.gc);
    kv[p + "eps"] = io::format_double(s.eps);
    if (!s.label.empty()) kv[p + "label"] = s.label;
  }
  return kv;
}

// ---------------------------------------------------------------------------
// Data

/// Columns are samples k = 0..N-1.
struct Dataset {
  Matrix x, x_next, y, wp;

  [[nodiscard]] int size() const { return static_cast<int>(x.cols()); }
};

namespace detail {

inline Vector in_ball(std::mt19937_64& rng, Eigen::Index dim, double radius) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = normal(rng);
  const double nv = v.norm();
  if (nv == 0.0) return Vector::Zero(dim);
  return v * (radius * std::pow(unif(rng), 1.0 / static_cast<double>(dim)) / nv);
}

}  // namespace detail

/// x+ = A x + B_p w_p + w, y = C_y x + D_yp w_p + v with ||w|| <= alpha_w, ||v|| <= alpha_v.
inline Dataset generate_data(const ScenarioConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> x0(c.x0_range.lo, c.x0_range.hi);
  std::uniform_real_distribution<double> wp(c.wp_range.lo, c.wp_range.hi);
  const Eigen::Index n = c.nx(), mp = c.mp(), py = c.py();
  const int count = c.n_samples;
  Dataset d{Matrix(n, count), Matrix(n, count), Matrix(py, count), Matrix(mp, count)};
  Vector x(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) = x0(rng);
  for (int k = 0; k < count; ++k) {
    Vector u(mp);
    for (Eigen::Index i = 0; i < mp; ++i) u(i) = wp(rng);
    const Vector w = detail::in_ball(rng, n, c.alpha_w);
    const Vector v = detail::in_ball(rng, py, c.alpha_v);
    d.x.col(k) = x;
    d.wp.col(k) = u;
    d.y.col(k) = c.c_y * x + c.d_yp * u + v;
    x = c.a * x + c.b_p * u + w;
    d.x_next.col(k) = x;
  }
  return d;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  io::write_matrix(dir / "x.csv", d.x);
  io::write_matrix(dir / "x_next.csv", d.x_next);
  io::write_matrix(dir / "y.csv", d.y);
  io::write_matrix(dir / "wp.csv", d.wp);
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d{io::read_matrix(dir / "x.csv"), io::read_matrix(dir / "x_next.csv"),
            io::read_matrix(dir / "y.csv"), io::read_matrix(dir / "wp.csv")};
  require(d.x_next.cols() == d.x.cols() && d.y.cols() == d.x.cols() && d.wp.cols() == d.x.cols() &&
              d.x_next.rows() == d.x.rows(),
          Errc::DimensionMismatch, "dataset files disagree in shape");
  return d;
}

/// Regression samples for one row block: X_k = [x_k; w_p,k] and Y_k = x_{k+1} or y_k.
inline std::vector<RegressionSample> block_samples(const ScenarioConfig& c, const Dataset& d,
                                                   RowBlock b) {
  require(d.x.rows() == c.nx() && d.wp.rows() == c.mp() && d.y.rows() == c.py(),
          Errc::DimensionMismatch, "dataset does not match the configured system");
  std::vector<RegressionSample> out;
  const double alpha = b == RowBlock::AB ? c.alpha_w : c.alpha_v;
  for (int k = 0; k < d.size(); ++k) {
    RegressionSample s;
    s.x.resize(c.nx() + c.mp(), 1);
    s.x << d.x.col(k), d.wp.col(k);
    s.y = b == RowBlock::AB ? Matrix(d.x_next.col(k)) : Matrix(d.y.col(k));
    s.q = identity(s.y.rows());
    s.r = scalar_matrix(alpha * alpha);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sets

struct BlockSets {
  std::vector<Qmi> priors;
  std::vector<Qmi> data;        // one reparameterized QMI per sample (combined: per sample and prior)
  std::vector<Qmi> structural;  // one per structural constraint on this block
  Matrix theta_bar;
};

struct ColumnSets {
  BlockSets ab, cd;
};

struct SetBundle {
  // base priors per block, index 0 = AB, 1 = CD
  Qmi stacked[2], ball[2], informativity[2];
  std::map<PriorKind, ColumnSets> columns;
};

namespace detail {

inline Matrix center_of(const Qmi& q, const std::string& what) {
  auto c = bounded_center(q);
  require(c.has_value(), Errc::Unbounded, what + " prior has no bounded center");
  return *c;
}

inline BlockSets build_block(const ScenarioConfig& c, const std::vector<RegressionSample>& samples,
                             RowBlock b, std::vector<Qmi> priors, const Matrix& theta_bar,
                             QhatCache* cache) {
  BlockSets out;
  out.priors = std::move(priors);
  out.theta_bar = theta_bar;
  ReparamConfig rc;
  rc.epsilon = c.epsilon;
  rc.theta_bar = theta_bar;
  rc.objective = c.objective;
  rc.scaling = c.rhat_scaling;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    try {
      out.data.push_back(reparameterize(samples[k], out.priors, rc, cache));
    } catch (const Error& e) {
      if (e.code() == Errc::RankDeficient) {
        fail(Errc::RankDeficient, "sample " + std::to_string(k) + ": " + e.what());
      }
      throw;
    }
  }
  for (const auto& s : c.structural) {
    if (s.block != b) continue;
    out.structural.push_back(
        structural_constraint_qmi(s.e, s.f, s.gc, s.eps, out.priors, rc, cache));
  }
  return out;
}

}  // namespace detail

inline SetBundle build_sets(const ScenarioConfig& c, const Dataset& d, QhatCache* cache = nullptr) {
  c.validate();
  SetBundle sb;
  const RowBlock blocks[2] = {RowBlock::AB, RowBlock::CD};
  std::vector<RegressionSample> samples[2];
  Matrix truth[2] = {c.theta_ab(), c.theta_cd()};
  for (int k = 0; k < d.size(); ++k) {
    require(d.x.col(k).squaredNorm() + d.wp.col(k).squaredNorm() > 0.0, Errc::RankDeficient,
            "sample " + std::to_string(k) + ": regressor [x; w_p] is zero");
  }
  for (int i = 0; i < 2; ++i) {
    samples[i] = block_samples(c, d, blocks[i]);
    sb.stacked[i] = prior_from_data(samples[i]);
    sb.informativity[i] = informativity_prior(samples[i]);
    // the ball's scale applies to [A, B_p] only
    const Matrix center = i == 0 ? Matrix(c.ball_scale * truth[0]) : truth[1];
    sb.ball[i] = ball_prior(center, c.beta, c.radius_convention);
  }
  auto column = [&](PriorKind pk) {
    ColumnSets cs;
    for (int i = 0; i < 2; ++i) {
      std::vector<Qmi> pr;
      Matrix tb;
      switch (pk) {
        case PriorKind::Stacked:
          pr = {sb.stacked[i]};
          tb = detail::center_of(sb.stacked[i], "stacked");
          break;
        case PriorKind::Ball:
          pr = {sb.ball[i]};
          tb = detail::center_of(sb.ball[i], "ball");
          break;
        case PriorKind::Informativity:
          pr = {sb.informativity[i]};
          tb = c.informativity_true_center ? truth[i] : detail::center_of(sb.informativity[i], "informativity");
          break;
        case PriorKind::Combined:
          pr = {sb.stacked[i], sb.ball[i], sb.informativity[i]};
          tb = detail::center_of(sb.stacked[i], "stacked");
          break;
      }
      BlockSets bs = detail::build_block(c, samples[i], blocks[i], std::move(pr), tb, cache);
      (i == 0 ? cs.ab : cs.cd) = std::move(bs);
    }
    return cs;
  };
  const bool combined = std::find(c.priors.begin(), c.priors.end(), PriorKind::Combined) != c.priors.end();
  for (PriorKind pk : kAllPriors) {
    const bool wanted = std::find(c.priors.begin(), c.priors.end(), pk) != c.priors.end();
    if (wanted || (combined && pk != PriorKind::Combined)) sb.columns[pk] = column(pk);
  }
  if (combined) {
    // the combined column also carries every QMI the single-prior columns derived
    auto& cc = sb.columns[PriorKind::Combined];
    for (PriorKind pk : {PriorKind::Stacked, PriorKind::Ball, PriorKind::Informativity}) {
      const ColumnSets& o = sb.columns.at(pk);
      for (auto [dst, src] : {std::pair{&cc.ab, &o.ab}, std::pair{&cc.cd, &o.cd}}) {
        dst->data.insert(dst->data.end(), src->data.begin(), src->data.end());
        dst->structural.insert(dst->structural.end(), src->structural.begin(), src->structural.end());
      }
    }
  }
  return sb;
}

/// Plant for one table cell: the column's priors plus the row's extra QMIs.
inline UncertainPlant make_plant(const ScenarioConfig& c, const ColumnSets& cs, ConstraintKind k) {
  UncertainPlant pl;
  pl.n_x = c.nx();
  pl.m_p = c.mp();
  pl.p_y = c.py();
  pl.p_p = c.c_p.rows();
  pl.c_p = c.c_p;
  pl.d_p = c.d_p;
  pl.qmi_ab = cs.ab.priors.front();
  pl.qmi_cd = cs.cd.priors.front();
  auto add = [&](RowBlock b, const std::vector<Qmi>& qs, std::size_t from = 0) {
    for (std::size_t i = from; i < qs.size(); ++i) pl.extra_qmis.push_back({b, qs[i]});
  };
  add(RowBlock::AB, cs.ab.priors, 1);
  add(RowBlock::CD, cs.cd.priors, 1);
  if (k == ConstraintKind::Data || k == ConstraintKind::Combined) {
    add(RowBlock::AB, cs.ab.data);
    add(RowBlock::CD, cs.cd.data);
  }
  if (k == ConstraintKind::Prior || k == ConstraintKind::Combined) {
    add(RowBlock::AB, cs.ab.structural);
    add(RowBlock::CD, cs.cd.structural);
  }
  return pl;
}

// ---------------------------------------------------------------------------
// Table

struct CellResult {
  PriorKind prior = PriorKind::Stacked;
  ConstraintKind constraints = ConstraintKind::None;
  std::string status = "pending";  // ok, infeasible, error
  double gamma = std::numeric_limits<double>::quiet_NaN();
  bool certified = false;
  bool validated = false;
  double max_ratio = std::numeric_limits<double>::quiet_NaN();
  int qmi_count = 0;
  double seconds = 0.0;
  std::string message;
  std::optional<SynthesisResult> synthesis;

  [[nodiscard]] bool ok() const { return status == "ok"; }
};

struct ResultTable {
  std::string name;
  std::vector<PriorKind> priors;
  std::vector<ConstraintKind> constraints;
  std::vector<CellResult> cells;  // row-major over constraints x priors

  [[nodiscard]] const CellResult& at(ConstraintKind k, PriorKind p) const {
    for (const auto& c : cells)
      if (c.constraints == k && c.prior == p) return c;
    fail(Errc::InvalidArgument, "no cell " + to_string(k) + "/" + to_string(p));
  }

  static std::string fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
  }

  /// Certified gamma per cell; rows are constraint sets, columns priors.
  [[nodiscard]] std::string to_csv() const {
    std::string out = "constraints";
    for (auto p : priors) out += "," + to_string(p);
    out += "\n";
    for (auto k : constraints) {
      out += to_string(k);
      for (auto p : priors) {
        const auto& c = at(k, p);
        out += "," + (c.ok() ? fixed(c.gamma) : c.status);
      }
      out += "\n";
    }
    return out;
  }

  [[nodiscard]] std::string details_csv() const {
    std::string out = "prior,constraints,status,gamma,certified,validated,max_ratio,qmis\n";
    for (const auto& c : cells) {
      out += to_string(c.prior) + "," + to_string(c.constraints) + "," + c.status + "," +
             (c.ok() ? fixed(c.gamma) : "") + "," + (c.certified ? "yes" : "no") + "," +
             (c.validated ? "yes" : "no") + "," + (c.ok() ? fixed(c.max_ratio) : "") + "," +
             std::to_string(c.qmi_count) + "\n";
    }
    return out;
  }

  [[nodiscard]] std::string to_markdown() const {
    static const std::map<PriorKind, std::string> col{{PriorKind::Stacked, "Σ0,D (stacked)"},
                                                       {PriorKind::Ball, "Σ0,L (ball)"},
                                                       {PriorKind::Informativity, "Σ0,I (informativity)"},
                                                       {PriorKind::Combined, "Σ0,C (combined)"}};
    static const std::map<ConstraintKind, std::string> row{{ConstraintKind::None, "∅"},
                                                            {ConstraintKind::Data, "Σ_D"},
                                                            {ConstraintKind::Prior, "Σ_P"},
                                                            {ConstraintKind::Combined, "Σ_C"}};
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> head{""};
    for (auto p : priors) head.push_back(col.at(p));
    grid.push_back(head);
    for (auto k : constraints) {
      std::vector<std::string> r{row.at(k)};
      for (auto p : priors) {
        const auto& c = at(k, p);
        r.push_back(c.ok() ? fixed(c.gamma, 3) : c.status);
      }
      grid.push_back(r);
    }
    // pad by code points so the Greek labels line up
    auto width = [](const std::string& s) {
      std::size_t w = 0;
      for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
      return w;
    };
    std::vector<std::size_t> wcol(head.size(), 0);
    for (const auto& r : grid)
      for (std::size_t j = 0; j < r.size(); ++j) wcol[j] = std::max(wcol[j], width(r[j]));
    std::string out = "Certified H-infinity bounds, " + name + "\n\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
      out += "|";
      for (std::size_t j = 0; j < grid[i].size(); ++j) {
        out += " " + grid[i][j] + std::string(wcol[j] - width(grid[i][j]), ' ') + " |";
      }
      out += "\n";
      if (i == 0) {
        out += "|";
        for (std::size_t j = 0; j < wcol.size(); ++j) out += std::string(wcol[j] + 2, '-') + "|";
        out += "\n";
      }
    }
    return out;
  }
};

struct RunOptions {
  bool verify = true;
  bool validate = true;
  SynthesisOptions synthesis{};
};

inline CellResult run_cell(const ScenarioConfig& c, const SetBundle& sb, PriorKind p,
                           ConstraintKind k, const RunOptions& opt = {}) {
  CellResult r;
  r.prior = p;
  r.constraints = k;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const UncertainPlant pl = make_plant(c, sb.columns.at(p), k);
    r.qmi_count = static_cast<int>(pl.all_qmis().size());
    SynthesisResult res = synthesize(pl, opt.synthesis);
    r.gamma = res.gamma;
    r.status = "ok";
    if (opt.verify) {
      const auto cert = verify_robust_bound(pl, res.estimator, res.gamma, opt.synthesis);
      r.certified = cert.certified;
      if (!cert.certified) r.message = cert.report;
    }
    if (opt.validate) {
      const auto rep = validate_by_sampling(pl, res, c.validation_samples,
                                            c.seed * 1000003ull + static_cast<std::uint64_t>(p) * 16 +
                                                static_cast<std::uint64_t>(k));
      r.validated = rep.pass;
      r.max_ratio = rep.max_ratio;
    }
    r.synthesis = std::move(res);
  } catch (const Error& e) {
    r.status = e.code() == Errc::Infeasible ? "infeasible" : "error";
    r.message = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Runs every selected cell in a small work pool; cell failures are recorded,
/// never thrown.
inline ResultTable run_table(const ScenarioConfig& c, const SetBundle& sb, const RunOptions& opt = {}) {
  ResultTable t;
  t.name = c.name;
  t.priors = c.priors;
  t.constraints = c.constraints;
  for (auto k : c.constraints)
    for (auto p : c.priors) t.cells.push_back(CellResult{p, k});
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const int workers = std::min<int>(c.threads > 0 ? c.threads : hw, static_cast<int>(t.cells.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < t.cells.size(); i = next++) {
      t.cells[i] = run_cell(c, sb, t.cells[i].prior, t.cells[i].constraints, opt);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  return t;
}

inline ResultTable run_scenario(const ScenarioConfig& c, const RunOptions& opt = {}) {
  const Dataset d = generate_data(c);
  QhatCache cache;
  const SetBundle sb = build_sets(c, d, &cache);
  return run_table(c, sb, opt);
}

// ---------------------------------------------------------------------------
// Stored QMI bundles and synthesis results

/// Writes every QMI of a plant as CSV plus an index of (block, file).
inline void write_plant(const std::filesystem::path& dir, const UncertainPlant& pl) {
  io::KeyValues kv;
  kv["n_x"] = std::to_string(pl.n_x);
  kv["m_p"] = std::to_string(pl.m_p);
  kv["p_y"] = std::to_string(pl.p_y);
  kv["p_p"] = std::to_string(pl.p_p);
  kv["qmi_count"] = std::to_string(pl.all_qmis().size());
  io::write_matrix(dir / "Cp.csv", pl.c_p);
  io::write_matrix(dir / "Dp.csv", pl.d_p);
  const auto all = pl.all_qmis();
  for (std::size_t i = 0; i < all.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "qmi_%04zu.csv", i);
    kv["qmi." + std::to_string(i) + ".block"] = all[i].block == RowBlock::AB ? "AB" : "CD";
    kv["qmi." + std::to_string(i) + ".file"] = name;
    io::write_matrix(dir / name, all[i].qmi.matrix());
  }
  io::write_file(dir / "plant.txt", io::format_key_values(kv));
}

inline UncertainPlant read_plant(const std::filesystem::path& dir) {
  const auto kv = io::parse_key_values(io::read_file(dir / "plant.txt"), (dir / "plant.txt").string());
  auto num = [&](const std::string& k) {
    const auto it = kv.find(k);
    require(it != kv.end(), Errc::Parse, "plant.txt lacks '" + k + "'");
    return static_cast<Eigen::Index>(io::parse_double(it->second, k));
  };
  UncertainPlant pl;
  pl.n_x = num("n_x");
  pl.m_p = num("m_p");
  pl.p_y = num("p_y");
  pl.p_p = num("p_p");
  pl.c_p = io::read_matrix(dir / "Cp.csv");
  pl.d_p = io::read_matrix(dir / "Dp.csv");
  const auto count = num("qmi_count");
  require(count >= 2, Errc::Parse, "a plant needs at least two QMIs");
  for (Eigen::Index i = 0; i < count; ++i) {
    const std::string p = "qmi." + std::to_string(i) + ".";
    const auto b = kv.find(p + "block");
    const auto f = kv.find(p + "file");
    require(b != kv.end() && f != kv.end(), Errc::Parse, "plant.txt lacks " + p + "*");
    const RowBlock block = b->second == "AB" ? RowBlock::AB : RowBlock::CD;
    const Matrix pi = io::read_matrix(dir / f->second);
    const Eigen::Index rows = block == RowBlock::AB ? pl.n_x : pl.p_y;
    require(pi.rows() == rows + pl.nz(), Errc::DimensionMismatch, f->second + " has wrong size");
    Qmi q(rows, pl.nz(), pi);
    if (i == 0) {
      pl.qmi_ab = q;
    } else if (i == 1) {
      pl.qmi_cd = q;
    } else {
      pl.extra_qmis.push_back({block, q});
    }
  }
  pl.validate();
  return pl;
}

inline void write_result(const std::filesystem::path& dir, const SynthesisResult& r) {
  io::write_matrix(dir / "AE.csv", r.estimator.a_e);
  io::write_matrix(dir / "BE.csv", r.estimator.b_e);
  io::write_matrix(dir / "CE.csv", r.estimator.c_e);
  io::write_matrix(dir / "DE.csv", r.estimator.d_e);
  io::write_matrix(dir / "lyapunov.csv", r.lyapunov_certificate);
  const auto w = r.multipliers.flattened();
  io::write_matrix(dir / "multipliers.csv",
                   Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size())));
  io::KeyValues kv;
  kv["gamma"] = io::format_double(r.gamma);
  kv["solver_status"] = r.solver_report.solver_status;
  kv["iterations"] = std::to_string(r.solver_report.iterations);
  io::write_file(dir / "result.txt", io::format_key_values(kv));
}

inline SynthesisResult read_result(const std::filesystem::path& dir) {
  SynthesisResult r;
  r.estimator = {io::read_matrix(dir / "AE.csv"), io::read_matrix(dir / "BE.csv"),
                 io::read_matrix(dir / "CE.csv"), io::read_matrix(dir / "DE.csv")};
  r.lyapunov_certificate = io::read_matrix(dir / "lyapunov.csv");
  const Matrix w = io::read_matrix(dir / "multipliers.csv");
  require(w.size() >= 2, Errc::Parse, "multipliers.csv needs at least two entries");
  std::vector<double> all(w.data(), w.data() + w.size());
  r.multipliers = detail::split_multipliers(all);
  const auto kv = io::parse_key_values(io::read_file(dir / "result.txt"));
  const auto g = kv.find("gamma");
  require(g != kv.end(), Errc::Parse, "result.txt lacks gamma");
  r.gamma = io::parse_double(g->second, "gamma");
  return r;
}

}  // namespace qmiest
