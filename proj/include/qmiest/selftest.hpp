#pragma once

// Acceptance suites shared by `qmiest selftest` and the acceptance binary.
// Each check returns one verdict with a short measured summary.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "qmiest/analysis.hpp"
#include "qmiest/experiments.hpp"
#include "qmiest/prior.hpp"
#include "qmiest/qmi.hpp"
#include "qmiest/reparam.hpp"

namespace qmiest::selftest {

struct Verdict {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;

  [[nodiscard]] std::string line() const {
    char t[32];
    std::snprintf(t, sizeof t, "%.1f s", seconds);
    return std::string(pass ? "PASS" : "FAIL") + " [" + std::to_string(id) + "] " + name + ": " +
           detail + " (" + t + ")";
  }
};

namespace detail {

// Small random source for the randomized suites.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }

  Matrix matrix(Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * normal();
    return m;
  }

  Matrix orthogonal(Eigen::Index n) {
    Eigen::HouseholderQR<Matrix> qr(matrix(n, n));
    return qr.householderQ() * Matrix::Identity(n, n);
  }

  Matrix pd(Eigen::Index n, double lo = 0.5, double hi = 2.0) {
    const Matrix u = orthogonal(n);
    Vector ev(n);
    for (Eigen::Index i = 0; i < n; ++i) ev(i) = uniform(lo, hi);
    const Matrix out = u * ev.asDiagonal() * u.transpose();
    return 0.5 * (out + out.transpose());
  }

  Matrix full_column_rank(Eigen::Index n, Eigen::Index m) {
    const Matrix u = orthogonal(n).leftCols(m);
    Vector s(m);
    for (Eigen::Index i = 0; i < m; ++i) s(i) = uniform(0.3, 3.0);
    return u * s.asDiagonal() * orthogonal(m).transpose();
  }

  // uniform in the Frobenius ball
  Matrix in_ball(Eigen::Index r, Eigen::Index c, double radius) {
    Matrix m = matrix(r, c);
    const double norm = m.norm();
    const double rho = radius * std::pow(uniform(0.0, 1.0), 1.0 / static_cast<double>(r * c));
    return norm > 0 ? Matrix(m * (rho / norm)) : m;
  }

 private:
  std::mt19937_64 rng_;
};

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

template <class Fn>
Verdict timed(int id, std::string name, Fn&& body) {
  Verdict v;
  v.id = id;
  v.name = std::move(name);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail = std::string("aborted: ") + e.what();
  }
  v.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return v;
}

// +inf for cells without a bound
inline double gamma_or_inf(const CellResult& c) {
  return c.ok() ? c.gamma : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// 200 single-sample instances (p <= 2, n <= 3) with a ball prior, 10^4 probes
/// each. (i): theta in the sample set and the prior => in the enclosure (tol
/// 1e-7). (ii): theta violating the inflated sample bound by more than 1e-6 =>
/// outside the enclosure. Runtime limit 300 s.
inline Verdict reparam_soundness(std::uint64_t seed, int instances = 200, int probes = 10000) {
  return detail::timed(1, "per-sample enclosure soundness", [&](Verdict& v) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::Draw g(seed * 7919 + 1);
    QhatCache cache;
    long hits_i = 0, hits_ii = 0, bad_i = 0, bad_ii = 0;
    for (int t = 0; t < instances; ++t) {
      const int n = g.integer(1, 3), m = g.integer(1, n), p = g.integer(1, 2);
      const Matrix center = g.matrix(p, n);
      const double beta = g.uniform(0.2, 1.0);
      const double alpha = g.uniform(0.01, 0.5);
      const std::vector<Qmi> priors{ball_prior(center, beta)};
      const Matrix theta_tr = center + g.in_ball(p, n, beta);
      RegressionSample s;
      s.x = g.full_column_rank(n, m);
      s.q = g.pd(p);
      s.r = alpha * alpha * identity(m);
      Matrix w = g.matrix(p, m);
      const double worst = max_eigenvalue(w.transpose() * s.q * w);
      if (worst > 0) w *= alpha * std::sqrt(g.uniform(0.0, 1.0) / worst);
      s.y = theta_tr * s.x + w;

      ReparamConfig cfg;
      cfg.scaling = t % 2 == 0 ? RhatScaling::Inverse : RhatScaling::Direct;
      const Qmi hat = reparameterize(s, priors, cfg, &cache);
      const Matrix inflated = s.r + rhat_gamma_from_eps(s.r, cfg.epsilon, cfg.scaling).rhat;

      for (int k = 0; k < probes; ++k) {
        Matrix th;
        switch (k % 4) {
          case 0: th = center + g.in_ball(p, n, beta); break;          // inside the prior
          case 1: th = theta_tr + g.in_ball(p, n, 2.0 * alpha); break;  // near the data
          case 2: th = theta_tr + g.in_ball(p, n, 0.2 * alpha); break;
          default: th = theta_tr + g.matrix(p, n, 2.0); break;          // far out
        }
        const Matrix res = th * s.x - s.y;
        const Matrix form = res.transpose() * s.q * res;
        if (is_psd(s.r - form) && contains(priors[0], th)) {
          ++hits_i;
          if (!contains(hat, th, 1e-7)) ++bad_i;
        }
        if (min_eigenvalue(inflated - form) < -1e-6) {
          ++hits_ii;
          if (contains(hat, th)) ++bad_ii;
        }
      }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    v.pass = bad_i == 0 && bad_ii == 0 && hits_i > 0 && hits_ii > 0 && secs <= 300.0;
    v.detail = std::to_string(bad_i) + " inclusion violations over " + std::to_string(hits_i) +
               " probes in sample set and prior, " + std::to_string(bad_ii) +
               " exclusion violations over " + std::to_string(hits_ii) + " probes";
  });
}

/// Scalar Q_hat program: prior |theta| <= 2, Q = 1, gamma^2 = 3. The multiplier
/// row forces lambda >= (1 + gamma^2) Q and the trailing row Q_hat >= beta^2 lambda.
inline Verdict qhat_kkt() {
  return detail::timed(2, "scalar Q_hat program against KKT point", [&](Verdict& v) {
    const double beta = 2.0, q = 1.0, gamma_sq = 3.0;
    const double lambda_star = (1.0 + gamma_sq) * q;
    const double qhat_star = beta * beta * lambda_star;
    const std::vector<Qmi> priors{ball_prior(scalar_matrix(0.0), beta)};
    const auto sol = solve_qhat(priors, scalar_matrix(q), gamma_sq, scalar_matrix(0.0));
    const double eq = std::abs(sol.qhat(0, 0) - qhat_star);
    const double el = sol.lambdas.size() == 1 ? std::abs(sol.lambdas[0] - lambda_star) : 1e9;
    v.pass = eq <= 1e-4 && el <= 1e-4;
    v.detail = "Q_hat " + detail::fmt("%.8f", sol.qhat(0, 0)) + " (oracle " +
               detail::fmt("%g", qhat_star) + "), lambda " +
               detail::fmt("%.8f", sol.lambdas.empty() ? NAN : sol.lambdas[0]) + " (oracle " +
               detail::fmt("%g", lambda_star) + ")";
  });
}

/// 1000 strictly definite instances: strict membership agrees between a set
/// and its dual (50 probes each, exact ties skipped); dualizing twice
/// returns the input within 1e-10 relative.
inline Verdict dualization(std::uint64_t seed, int instances = 1000) {
  return detail::timed(3, "dualization equivalence and involution", [&](Verdict& v) {
    detail::Draw g(seed * 7919 + 3);
    long agree = 0, disagree = 0, ties = 0;
    double involution = 0.0;
    for (int t = 0; t < instances; ++t) {
      const int p = g.integer(1, 3), n = g.integer(1, 3);
      const Qmi primal = from_center_shape(g.pd(p), g.pd(n), g.matrix(p, n, 0.5));
      const Qmi dual = dualize(primal);
      const Matrix center = *bounded_center(primal);
      for (int k = 0; k < 50; ++k) {
        const Matrix d = center + g.matrix(p, n, 0.8);
        const double lhs = min_eigenvalue(evaluate(primal, d));
        const double rhs = min_eigenvalue(evaluate(dual, d));
        if (std::abs(lhs) < 1e-9 || std::abs(rhs) < 1e-9) {
          ++ties;
          continue;
        }
        ((lhs > 0) == (rhs > 0) && (lhs > 0) == contains(dual, d) ? agree : disagree) += 1;
      }
      // general invertible weight with p negative and n positive eigenvalues
      Matrix dg = identity(p + n);
      for (int i = 0; i < p + n; ++i) dg(i, i) = (i < p ? -1.0 : 1.0) * g.uniform(0.5, 2.0);
      const Matrix tt = g.full_column_rank(p + n, p + n);
      const Matrix pi = tt.transpose() * dg * tt;
      const Qmi q(p, n, 0.5 * (pi + pi.transpose()));
      const Qmi back = dualize(dualize(q));
      involution =
          std::max(involution, max_abs(back.matrix() - q.matrix()) / std::max(1.0, max_abs(q.matrix())));
    }
    v.pass = disagree == 0 && involution <= 1e-10 && agree > 0;
    v.detail = std::to_string(disagree) + " disagreements over " + std::to_string(agree + disagree) +
               " probes (" + std::to_string(ties) + " ties skipped), involution error " +
               detail::fmt("%.2e", involution);
  });
}

/// 10^4 sets of samples with each disturbance inside its own bound: the
/// stacked constraint holds at the true parameter (tol 1e-9).
inline Verdict stacking(std::uint64_t seed, int draws = 10000) {
  return detail::timed(4, "stacked per-sample bounds", [&](Verdict& v) {
    detail::Draw g(seed * 7919 + 4);
    long bad = 0;
    for (int t = 0; t < draws; ++t) {
      const int p = g.integer(1, 2), n = g.integer(1, 3), count = g.integer(1, 6);
      const Matrix theta = g.matrix(p, n);
      const Matrix q = g.pd(p);
      const double alpha = g.uniform(0.01, 1.0);
      std::vector<RegressionSample> smp;
      for (int k = 0; k < count; ++k) {
        RegressionSample s;
        s.x = g.matrix(n, 1);
        s.q = q;
        s.r = scalar_matrix(alpha * alpha);
        Matrix w = g.matrix(p, 1);
        const double wq = (w.transpose() * q * w)(0, 0);
        // radius up to the bound, including samples exactly on it
        const double u = k == 0 ? 1.0 : std::pow(g.uniform(0.0, 1.0), 1.0 / p);
        if (wq > 0) w *= alpha * u / std::sqrt(wq);
        s.y = theta * s.x + w;
        smp.push_back(s);
      }
      if (!stack_samples(smp).consistent(theta, 1e-9)) ++bad;
    }
    v.pass = bad == 0;
    v.detail = std::to_string(bad) + " violations over " + std::to_string(draws) + " draws";
  });
}

/// (0.5, 1, 1, 0) has peak gain 1 / (1 - 0.5) at DC; then 100 random stable
/// systems (n <= 6) where the LMI value and the grid peak agree within 1e-3.
inline Verdict hinf_oracle(std::uint64_t seed, int systems = 100) {
  return detail::timed(5, "H-infinity norm oracle", [&](Verdict& v) {
    const double a = 0.5, b = 1.0, c = 1.0;
    const double oracle = std::abs(c * b / (1.0 - a));
    const double h = hinf_norm({scalar_matrix(a), scalar_matrix(b), scalar_matrix(c), scalar_matrix(0.0)});
    detail::Draw g(seed * 7919 + 5);
    double worst = 0.0;
    for (int t = 0; t < systems; ++t) {
      const int n = g.integer(1, 6), m = g.integer(1, 3), p = g.integer(1, 3);
      Matrix am = g.matrix(n, n);
      const double rho = spectral_radius(am);
      if (rho > 0) am *= g.uniform(0.1, 0.95) / rho;
      const StateSpace sys{am, g.matrix(n, m), g.matrix(p, n), g.matrix(p, m, 0.5)};
      const double grid = hinf_grid(sys).gain;
      worst = std::max(worst, std::abs(hinf_lmi(sys) / grid - 1.0));
    }
    v.pass = std::abs(h - oracle) <= 1e-4 && worst <= 1e-3;
    v.detail = "analytic case " + detail::fmt("%.8f", h) + " (oracle " + detail::fmt("%g", oracle) +
               "), worst LMI/grid deviation " + detail::fmt("%.2e", worst) + " over " +
               std::to_string(systems) + " systems";
  });
}

/// System 2 with its published parameters: the Combined-prior column
/// synthesizes, every certified bound survives 100 sampled plants within
/// gamma * 1.001, the whole table takes at most 120 s, and every bound lies in
/// [0.1, 10] (the decades spanned by the reference values 0.428 .. 1.53).
inline Verdict end_to_end(const ScenarioConfig& base) {
  return detail::timed(6, "system 2 end to end", [&](Verdict& v) {
    ScenarioConfig c = base;
    c.validation_samples = 100;
    const auto t0 = std::chrono::steady_clock::now();
    const ResultTable t = run_scenario(c);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool combined_ok = true, all_sound = true, decade = true;
    int finite = 0;
    double lo = INFINITY, hi = 0.0;
    for (const auto& cell : t.cells) {
      if (cell.prior == PriorKind::Combined && !cell.ok()) combined_ok = false;
      if (!cell.ok()) continue;
      ++finite;
      all_sound = all_sound && cell.certified && cell.validated && cell.max_ratio <= 1.001;
      decade = decade && cell.gamma >= 0.1 && cell.gamma <= 10.0;
      lo = std::min(lo, cell.gamma);
      hi = std::max(hi, cell.gamma);
    }
    std::string col;
    for (auto k : c.constraints) {
      const auto& cell = t.at(k, PriorKind::Combined);
      col += (col.empty() ? "" : " ") + (cell.ok() ? detail::fmt("%.3f", cell.gamma) : cell.status);
    }
    v.pass = combined_ok && all_sound && decade && finite > 0 && secs <= 120.0;
    v.detail = "combined column [" + col + "], " + std::to_string(finite) +
               " finite cells all certified and validated: " + (all_sound ? "yes" : "no") +
               ", range " + detail::fmt("%.3f", lo) + ".." + detail::fmt("%.3f", hi) + ", " +
               detail::fmt("%.1f s", secs);
  });
}

/// For 10 seeds of system 2, adding the per-sample sets never raises a
/// column's bound by more than 1e-6 (empty -> data and prior -> combined).
inline Verdict monotone(const ScenarioConfig& base, int seeds = 10) {
  return detail::timed(7, "per-sample sets never raise gamma", [&](Verdict& v) {
    int pairs = 0, bad = 0, errors = 0;
    double worst = -INFINITY;
    for (int s = 1; s <= seeds; ++s) {
      ScenarioConfig c = base;
      c.seed = static_cast<std::uint64_t>(s);
      RunOptions opt;
      opt.verify = opt.validate = false;
      const ResultTable t = run_scenario(c, opt);
      for (const auto& cell : t.cells) errors += cell.status == "error";
      for (auto p : c.priors) {
        for (auto [from, to] : {std::pair{ConstraintKind::None, ConstraintKind::Data},
                                std::pair{ConstraintKind::Prior, ConstraintKind::Combined}}) {
          const double g0 = detail::gamma_or_inf(t.at(from, p));
          const double g1 = detail::gamma_or_inf(t.at(to, p));
          if (std::isinf(g0)) continue;
          ++pairs;
          worst = std::max(worst, g1 - g0);
          if (!(g1 <= g0 + 1e-6)) ++bad;
        }
      }
    }
    v.pass = bad == 0 && errors == 0 && pairs > 0;
    v.detail = std::to_string(bad) + " increases over " + std::to_string(pairs) +
               " finite pairs, largest change " + detail::fmt("%+.2e", worst) + ", " +
               std::to_string(errors) + " solver errors";
  });
}

/// 100 data sets per example: the true blocks lie in every prior, every
/// per-sample and structural set, and in 20 random nonnegative combinations
/// of each column's QMIs.
inline Verdict containment(int seeds = 100) {
  return detail::timed(8, "true system contained in every set", [&](Verdict& v) {
    long checks = 0, bad = 0;
    detail::Draw g(88);
    for (int ex : {1, 2}) {
      QhatCache cache;
      for (int s = 1; s <= seeds; ++s) {
        ScenarioConfig c = example_config(ex);
        c.seed = static_cast<std::uint64_t>(s);
        const SetBundle sb = build_sets(c, generate_data(c), &cache);
        const Matrix truth[2] = {c.theta_ab(), c.theta_cd()};
        auto check = [&](const Qmi& q, int b, double tol) {
          ++checks;
          if (!contains(q, truth[b], tol)) ++bad;
        };
        for (int b = 0; b < 2; ++b) {
          check(sb.stacked[b], b, 1e-9);
          check(sb.ball[b], b, 1e-9);
          check(sb.informativity[b], b, 1e-9);
        }
        for (const auto& [pk, cs] : sb.columns) {
          int b = 0;
          for (const BlockSets* bs : {&cs.ab, &cs.cd}) {
            std::vector<Qmi> all;
            for (const auto* part : {&bs->priors, &bs->data, &bs->structural}) {
              for (const auto& q : *part) {
                check(q, b, 1e-9);
                all.push_back(q);
              }
            }
            for (int d = 0; d < 20; ++d) {
              std::vector<double> w(all.size());
              double sum = 0.0;
              for (auto& x : w) {
                x = g.uniform(0.0, 1.0) < 0.3 ? 0.0 : g.uniform(0.0, 1.0) * std::pow(10.0, g.integer(-3, 3));
                sum += x;
              }
              check(nonneg_combination(all, w), b, 1e-9 * (1.0 + sum));
            }
            ++b;
          }
        }
      }
    }
    v.pass = bad == 0;
    v.detail = std::to_string(bad) + " violations over " + std::to_string(checks) +
               " membership checks, " + std::to_string(seeds) + " seeds per example";
  });
}

/// The caller produces the table CSV bytes of one `reproduce --example 2
/// --seed 7` run; two runs must match exactly.
inline Verdict determinism(const std::function<std::string(int)>& reproduce_csv) {
  return detail::timed(9, "reproduce is byte-deterministic", [&](Verdict& v) {
    const std::string a = reproduce_csv(0);
    const std::string b = reproduce_csv(1);
    v.pass = !a.empty() && a == b;
    v.detail = a.empty() ? "no output" : (a == b ? "identical " : "different ") +
                                             std::to_string(a.size()) + " / " +
                                             std::to_string(b.size()) + " bytes";
  });
}

struct Options {
  std::uint64_t seed = 1;
  ScenarioConfig scenario = example_config(2);  // base for the end-to-end checks
  std::set<int> only;  // empty: all
  std::function<std::string(int)> reproduce_csv;
  std::function<void(const Verdict&)> on_verdict;
};

inline std::vector<Verdict> run(const Options& opt) {
  std::vector<Verdict> out;
  auto want = [&](int id) { return opt.only.empty() || opt.only.count(id) > 0; };
  auto emit = [&](Verdict v) {
    if (opt.on_verdict) opt.on_verdict(v);
    out.push_back(std::move(v));
  };
  if (want(1)) emit(reparam_soundness(opt.seed));
  if (want(2)) emit(qhat_kkt());
  if (want(3)) emit(dualization(opt.seed));
  if (want(4)) emit(stacking(opt.seed));
  if (want(5)) emit(hinf_oracle(opt.seed));
  if (want(6)) emit(end_to_end(opt.scenario));
  if (want(7)) emit(monotone(opt.scenario));
  if (want(8)) emit(containment());
  if (want(9) && opt.reproduce_csv) emit(determinism(opt.reproduce_csv));
  return out;
}

}  // namespace qmiest::selftest
