#include <gtest/gtest.h>

#include "qmiest/synth.hpp"
#include "support/gen.hpp"

using namespace qmiest;
using qmiest::testing::Gen;

namespace {

Matrix s(double v) { return scalar_matrix(v); }

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

UncertainPlant ball_plant(const PlantRealization& tr, double r_ab, double r_cd) {
  UncertainPlant pl;
  pl.n_x = tr.nx();
  pl.m_p = tr.mp();
  pl.p_y = tr.py();
  pl.p_p = tr.pp();
  pl.c_p = tr.c_p;
  pl.d_p = tr.d_p;
  pl.qmi_ab = ball_prior(hcat(tr.a, tr.b_p), r_ab);
  pl.qmi_cd = ball_prior(hcat(tr.c_y, tr.d_yp), r_cd);
  return pl;
}

PlantRealization system2() { return {s(0.8), s(1.0), s(1.0), s(0.1), s(1.0), s(0.0)}; }

PlantRealization random_plant(Gen& g, int n) {
  Matrix a = g.matrix(n, n);
  const double rho = spectral_radius(a);
  if (rho > 0) a *= g.uniform(0.2, 0.7) / rho;
  const int mp = g.integer(1, 2);
  return {a, g.matrix(n, mp), g.matrix(1, n), g.matrix(1, mp, 0.3), g.matrix(1, n),
          g.matrix(1, mp, 0.3)};
}

// Nominal H-infinity filtering bound for a known plant, by bisection on the
// bounded-real LMI of the closed loop in transformed estimator variables.
double nominal_filter_bound(const PlantRealization& p) {
  const Eigen::Index n = p.nx(), mp = p.mp(), py = p.py(), pp = p.pp();
  auto feasible = [&](double gsq) {
    sdp::LmiProblem prob;
    const auto x = prob.add_symmetric("X", n, false);
    const auto z = prob.add_symmetric("Z", n, false);
    const auto at = prob.add_matrix("At", n, n);
    const auto bt = prob.add_matrix("Bt", n, py);
    const auto ce = prob.add_matrix("Ce", pp, n);
    const auto de = prob.add_matrix("De", pp, py);
    sdp::BlockBuilder xb({n, n}, {n, n});
    xb.set(0, 0, x);
    xb.set(0, 1, z);
    xb.set(1, 0, z);
    xb.set(1, 1, z);
    const auto xcal = xb.build();
    // Xcal Acl, Xcal Bcl, Ccl, Dcl
    sdp::BlockBuilder xa({n, n}, {n, n});
    xa.set(0, 0, x * p.a + bt * p.c_y);
    xa.set(1, 0, z * p.a + bt * p.c_y);
    xa.set(0, 1, at);
    xa.set(1, 1, at);
    sdp::BlockBuilder xbm({n, n}, {mp});
    xbm.set(0, 0, x * p.b_p + bt * p.d_yp);
    xbm.set(1, 0, z * p.b_p + bt * p.d_yp);
    sdp::BlockBuilder cc({pp}, {n, n});
    cc.set(0, 0, sdp::AffineMatrix(p.c_p) - de * p.c_y);
    cc.set(0, 1, -1.0 * ce);
    const auto dd = sdp::AffineMatrix(p.d_p) - de * p.d_yp;
    sdp::BlockBuilder big({2 * n, mp, 2 * n, pp}, {2 * n, mp, 2 * n, pp});
    big.set(0, 0, xcal);
    big.set(1, 1, gsq * identity(mp));
    big.set_sym(2, 0, xa.build());
    big.set_sym(2, 1, xbm.build());
    big.set(2, 2, xcal);
    big.set_sym(3, 0, cc.build());
    big.set_sym(3, 1, dd);
    big.set(3, 3, identity(pp));
    prob.add_lmi("brl", big.build());
    prob.add_lmi("Z", z - 1e-9 * identity(n));
    const auto sol = sdp::solve(prob);
    return sol.optimal();
  };
  double lo = 0.0, hi = 1.0;
  while (!feasible(hi * hi)) hi *= 2.0;
  while (hi - lo > 1e-5 * hi) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid * mid) ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace

TEST(Lft, PrintedSelectorPattern) {
  const auto lft = assemble_lft(s(1), s(0.1), 1, 1, 1);
  Matrix expect(5, 4);
  // columns [x | w(2) | w_p]
  expect << 0, 1, 0, 0,   // x+
      1, 0, 0, 0,         // z: x
      0, 0, 0, 1,         // z: w_p
      1, 0, 0, 0.1,       // z_p
      0, 0, 1, 0;         // y
  EXPECT_EQ(lft.m, expect);
  const Matrix sel_x = lft.state_row().middleCols(1, 2);
  const Matrix sel_y = lft.y_row().middleCols(1, 2);
  EXPECT_EQ(sel_x * sel_y.transpose(), Matrix::Zero(1, 1));
}

TEST(Lft, ClosingTheLoopReproducesPlant) {
  Gen g(91);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = g.integer(1, 3), mp = g.integer(1, 2), py = g.integer(1, 2), pp = g.integer(1, 2);
    const PlantRealization p{g.matrix(n, n), g.matrix(n, mp), g.matrix(py, n), g.matrix(py, mp),
                             g.matrix(pp, n), g.matrix(pp, mp)};
    const auto lft = assemble_lft(p.c_p, p.d_p, n, mp, py);
    const Matrix x = g.matrix(n, 1), wp = g.matrix(mp, 1);
    Matrix z(n + mp, 1);
    z << x, wp;
    const Matrix w = p.delta() * z;
    Matrix v(n + n + py + mp, 1);
    v << x, w, wp;
    const Matrix out = lft.m * v;
    ASSERT_LE(max_abs(out.topRows(n) - (p.a * x + p.b_p * wp)), 1e-12);
    ASSERT_LE(max_abs(out.middleRows(n, n + mp) - z), 1e-12);
    ASSERT_LE(max_abs(out.middleRows(2 * n + mp, pp) - (p.c_p * x + p.d_p * wp)), 1e-12);
    ASSERT_LE(max_abs(out.bottomRows(py) - (p.c_y * x + p.d_yp * wp)), 1e-12);
  }
}

TEST(Lft, DimensionMismatch) {
  try {
    assemble_lft(Matrix::Ones(1, 2), s(0), 1, 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
}

TEST(MultiplierP, EmbeddingAndZero) {
  const UncertainPlant pl = ball_plant(system2(), 0.1, 0.2);
  MultiplierVector m{{1.0, 0.0}, {}};
  const Matrix p = multiplier_p(m, pl);
  // rows/cols [A_row(1) C_row(1) | x(1) w_p(1)]; the C_y row stays zero
  const Matrix pi = pl.qmi_ab.matrix();
  EXPECT_EQ(p(0, 0), pi(0, 0));
  EXPECT_EQ(p.row(1).norm(), 0.0);
  EXPECT_EQ(p.bottomRightCorner(2, 2), pi.bottomRightCorner(2, 2));
  EXPECT_EQ(multiplier_p({{0.0, 0.0}, {}}, pl), Matrix::Zero(4, 4));
  try {
    multiplier_p({{-1.0, 0.0}, {}}, pl);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NegativeMultiplier);
  }
  EXPECT_THROW(multiplier_p({{1.0}, {}}, pl), Error);
}

TEST(MultiplierP, PropertySoundness) {
  Gen g(92);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const PlantRealization tr = random_plant(g, g.integer(1, 2));
    UncertainPlant pl = ball_plant(tr, g.uniform(0.05, 0.5), g.uniform(0.05, 0.5));
    pl.extra_qmis.push_back({RowBlock::AB, ball_prior(hcat(tr.a, tr.b_p) + g.matrix(tr.nx(), pl.nz(), 0.05), 0.4)});
    const MultiplierVector m{{g.uniform(0, 2), g.uniform(0, 2)}, {g.uniform(0, 2)}};
    const Matrix p = multiplier_p(m, pl);
    const auto ab = sample_members(pl.qmi_ab, 250, trial);
    const auto cd = sample_members(pl.qmi_cd, 250, trial + 1000);
    for (int k = 0; k < 250; ++k) {
      if (!contains(pl.extra_qmis[0].qmi, ab[k])) continue;
      Matrix delta(pl.nw(), pl.nz());
      delta << ab[k], cd[k];
      Matrix di(pl.nw() + pl.nz(), pl.nz());
      di << delta, identity(pl.nz());
      ASSERT_GE(min_eigenvalue(di.transpose() * p * di), -1e-9);
      ++checked;
    }
  }
  EXPECT_GE(checked, 10000);
}

TEST(Synthesize, ZeroErrorChannel) {
  // z_p = y: a pass-through estimator has zero error for every plant.
  PlantRealization tr = system2();
  tr.c_p = tr.c_y;
  tr.d_p = tr.d_yp;
  const UncertainPlant pl = ball_plant(tr, 1e-6, 1e-6);
  const auto res = synthesize(pl);
  EXPECT_LE(res.gamma, 1e-3);
  EXPECT_NEAR(res.estimator.d_e(0, 0), 1.0, 1e-2);
  const auto cert = verify_robust_bound(pl, Estimator{s(0), s(0), s(0), s(1)}, 1e-3);
  EXPECT_TRUE(cert.certified) << cert.report;
}

TEST(Synthesize, PointUncertaintyMatchesNominalFilter) {
  const PlantRealization tr = system2();
  const double nominal = nominal_filter_bound(tr);
  const UncertainPlant pl = ball_plant(tr, 1e-6, 1e-6);
  const auto res = synthesize(pl);
  EXPECT_NEAR(res.gamma / nominal, 1.0, 1e-2) << "nominal " << nominal << " robust " << res.gamma;
  const auto rep = validate_by_sampling(pl, res, 100, 5);
  EXPECT_TRUE(rep.pass);
  EXPECT_NEAR(rep.max_norm / res.gamma, 1.0, 1e-2);
  const auto refute = verify_robust_bound(pl, res.estimator, 0.5 * res.gamma);
  EXPECT_FALSE(refute.certified) << refute.report;
}

TEST(Synthesize, PointUncertaintyTwoStates) {
  Gen g(93);
  const PlantRealization tr = random_plant(g, 2);
  const double nominal = nominal_filter_bound(tr);
  const auto res = synthesize(ball_plant(tr, 1e-6, 1e-6));
  EXPECT_NEAR(res.gamma / nominal, 1.0, 1e-2) << "nominal " << nominal << " robust " << res.gamma;
}

TEST(Synthesize, CertificateRechecks) {
  const UncertainPlant pl = ball_plant(system2(), 0.05, 0.05);
  const auto res = synthesize(pl);
  EXPECT_GT(res.gamma, 0.0);
  EXPECT_TRUE(std::isfinite(res.gamma));
  EXPECT_GE(min_eigenvalue(res.lyapunov_certificate), 0.0);
  EXPECT_LE(res.solver_report.max_constraint_violation, 1e-6);
  const auto cert = verify_robust_bound(pl, res.estimator, res.gamma);
  EXPECT_TRUE(cert.certified) << cert.report;
  EXPECT_GE(cert.margin, -1e-6);
}

TEST(Synthesize, Infeasible) {
  // A ball wide enough to contain unstable A cannot be robustly estimated.
  const UncertainPlant pl = ball_plant(system2(), 0.5, 0.1);
  try {
    synthesize(pl);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Infeasible);
  }
}

TEST(Synthesize, PropertyExtraQmiNeverHurts) {
  Gen g(94);
  for (int trial = 0; trial < 8; ++trial) {
    const PlantRealization tr = random_plant(g, g.integer(1, 2));
    UncertainPlant pl = ball_plant(tr, 0.1, 0.1);
    const double base = synthesize(pl).gamma;
    const RowBlock b = trial % 2 ? RowBlock::AB : RowBlock::CD;
    const Matrix c = b == RowBlock::AB ? hcat(tr.a, tr.b_p) : hcat(tr.c_y, tr.d_yp);
    pl.extra_qmis.push_back({b, ball_prior(c + g.matrix(c.rows(), c.cols(), 0.03), 0.08)});
    const double more = synthesize(pl).gamma;
    EXPECT_LE(more, base + 1e-6) << "trial " << trial;
  }
}

TEST(Synthesize, PropertySoundOnRandomScenarios) {
  Gen g(95);
  int done = 0;
  for (int trial = 0; done < 20 && trial < 60; ++trial) {
    const PlantRealization tr = random_plant(g, g.integer(1, 2));
    const UncertainPlant pl = ball_plant(tr, g.uniform(0.01, 0.15), g.uniform(0.01, 0.15));
    SynthesisResult res;
    try {
      res = synthesize(pl);
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), Errc::Infeasible);
      continue;
    }
    ++done;
    const auto rep = validate_by_sampling(pl, res, 100, trial);
    EXPECT_TRUE(rep.pass) << "trial " << trial << " ratio " << rep.max_ratio;
    EXPECT_EQ(rep.unstable, 0);
    const auto cert = verify_robust_bound(pl, res.estimator, res.gamma);
    EXPECT_TRUE(cert.certified) << "trial " << trial << " " << cert.report << " margin " << cert.margin << " gamma " << res.gamma;
  }
  EXPECT_EQ(done, 20);
}

TEST(Validate, Deterministic) {
  const UncertainPlant pl = ball_plant(system2(), 0.05, 0.05);
  const auto res = synthesize(pl);
  const auto a = validate_by_sampling(pl, res, 50, 3);
  const auto b = validate_by_sampling(pl, res, 50, 3);
  EXPECT_EQ(a.norms, b.norms);
  EXPECT_TRUE(a.pass);
}

TEST(Validate, TamperedGammaFails) {
  const UncertainPlant pl = ball_plant(system2(), 0.05, 0.05);
  auto res = synthesize(pl);
  res.gamma *= 0.5;
  EXPECT_FALSE(validate_by_sampling(pl, res, 100, 3).pass);
}

TEST(Synthesize, PropertyQmiScaleInvariance) {
  // Pi and c Pi describe the same set; gamma must not move and the multiplier
  // must absorb the factor.
  Gen g(96);
  for (int trial = 0; trial < 6; ++trial) {
    const PlantRealization tr = random_plant(g, g.integer(1, 2));
    UncertainPlant pl = ball_plant(tr, 0.05, 0.05);
    const auto base = synthesize(pl);
    const double c = std::pow(10.0, g.uniform(-4.0, 4.0));
    pl.qmi_ab = Qmi(pl.qmi_ab.p(), pl.qmi_ab.n(), c * pl.qmi_ab.matrix());
    const auto scaled = synthesize(pl);
    EXPECT_NEAR(scaled.gamma / base.gamma, 1.0, 1e-5) << "trial " << trial << " c " << c;
    EXPECT_NEAR(scaled.multipliers.taus[0] * c / base.multipliers.taus[0], 1.0, 1e-2)
        << "trial " << trial;
  }
}

TEST(Synthesize, TinyWellInformedPriorCertifies) {
  // Radius 1e-4 around an O(1) center with entries of order 1e8: the
  // regime of a stacked prior from low-noise data.
  const PlantRealization tr = system2();
  UncertainPlant pl = ball_plant(tr, 1e-4, 1e-4);
  pl.qmi_ab = Qmi(1, 2, 1e8 * pl.qmi_ab.matrix());
  const auto res = synthesize(pl);
  EXPECT_LE(res.solver_report.max_constraint_violation, 1e-6);
  const double nominal = nominal_filter_bound(tr);
  EXPECT_NEAR(res.gamma / nominal, 1.0, 1e-2);
  const auto cert = verify_robust_bound(pl, res.estimator, res.gamma);
  EXPECT_TRUE(cert.certified) << cert.report;
}
