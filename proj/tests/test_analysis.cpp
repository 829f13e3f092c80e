#include <complex>

#include <gtest/gtest.h>

#include "qmiest/analysis.hpp"
#include "support/gen.hpp"

using namespace qmiest;
using qmiest::testing::Gen;

namespace {

Matrix s(double v) { return scalar_matrix(v); }

StateSpace scalar_sys(double a, double b, double c, double d) { return {s(a), s(b), s(c), s(d)}; }

StateSpace random_stable(Gen& g, int n, int m, int p) {
  Matrix a = g.matrix(n, n);
  const double rho = spectral_radius(a);
  if (rho > 0) a *= g.uniform(0.1, 0.95) / rho;
  return {a, g.matrix(n, m), g.matrix(p, n), g.matrix(p, m, 0.5)};
}

Matrix dc_gain(const StateSpace& sys) {
  const Matrix ima = identity(sys.states()) - sys.a;
  return sys.c * ima.partialPivLu().solve(sys.b) + sys.d;
}

}  // namespace

TEST(SpectralRadius, Examples) {
  EXPECT_NEAR(spectral_radius(0.7 * identity(3)), 0.7, 1e-10);
  Matrix a(2, 2);
  a << 0.7, 0, 0.3, 0.7;
  EXPECT_NEAR(spectral_radius(a), 0.7, 1e-10);
  a << 0, 1, -0.25, 0;
  EXPECT_NEAR(spectral_radius(a), 0.5, 1e-10);
  EXPECT_THROW(spectral_radius(Matrix::Zero(2, 3)), Error);
}

TEST(Hinf, AnalyticFirstOrder) {
  EXPECT_NEAR(hinf_norm(scalar_sys(0.5, 1, 1, 0)), 2.0, 1e-4);
  EXPECT_NEAR(hinf_lmi(scalar_sys(0.5, 1, 1, 0)), 2.0, 1e-4);
  EXPECT_NEAR(hinf_grid(scalar_sys(0.5, 1, 1, 0)).gain, 2.0, 1e-10);
}

TEST(Hinf, PureDelayAndStaticGain) {
  EXPECT_NEAR(hinf_norm(scalar_sys(0, 1, 1, 0)), 1.0, 1e-6);
  EXPECT_NEAR(hinf_norm(scalar_sys(0, 0, 0, 0.3)), 0.3, 1e-6);
}

TEST(Hinf, Unstable) {
  try {
    hinf_norm(scalar_sys(1.2, 1, 1, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Unstable);
  }
}

TEST(Hinf, ResonantPeakBetweenGridPoints) {
  // Lightly damped pair at w0 = 0.3001: |H| peaks near 1/(2 zeta) sharply.
  const double r = 0.999, w0 = 0.3001;
  Matrix a(2, 2);
  a << 2 * r * std::cos(w0), -r * r, 1, 0;
  Matrix b(2, 1), c(1, 2);
  b << 1, 0;
  c << 1, 0;
  const StateSpace sys{a, b, c, s(0)};
  // Dense oracle: 2e6 points around the resonance.
  double oracle = 0.0;
  for (int i = 0; i <= 2000000; ++i) {
    oracle = std::max(oracle, frequency_gain(sys, w0 - 0.01 + 0.02 * i / 2e6));
  }
  const double grid = hinf_grid(sys).gain;
  EXPECT_NEAR(grid / oracle, 1.0, 1e-6);
}

TEST(Hinf, PropertyLmiAgreesWithGrid) {
  Gen g(71);
  for (int trial = 0; trial < 100; ++trial) {
    const StateSpace sys = random_stable(g, g.integer(1, 6), g.integer(1, 3), g.integer(1, 3));
    const double grid = hinf_grid(sys).gain;
    const double lmi = hinf_lmi(sys);
    ASSERT_NEAR(lmi / grid, 1.0, 1e-3) << "trial " << trial;
  }
}

TEST(Hinf, PropertyLowerBounds) {
  Gen g(72);
  const double tol = 1e-6;
  for (int trial = 0; trial < 40; ++trial) {
    const StateSpace sys = random_stable(g, g.integer(1, 4), g.integer(1, 2), g.integer(1, 2));
    const double h = hinf_norm(sys, tol);
    EXPECT_GE(h, sigma_max(sys.d) - tol * std::max(1.0, h));
    EXPECT_GE(h, sigma_max(dc_gain(sys)) - tol * std::max(1.0, h));
  }
}

TEST(Hinf, PropertySubmultiplicative) {
  Gen g(73);
  for (int trial = 0; trial < 30; ++trial) {
    const StateSpace g1 = random_stable(g, g.integer(1, 3), 1, 2);
    const StateSpace g2 = random_stable(g, g.integer(1, 3), 2, 1);
    const double both = hinf_norm(series(g1, g2));
    EXPECT_LE(both, hinf_norm(g1) * hinf_norm(g2) + 1e-6);
  }
}

TEST(Hinf, GridOnlyMatches) {
  Gen g(74);
  const StateSpace sys = random_stable(g, 3, 2, 2);
  EXPECT_NEAR(hinf_norm(sys, 1e-6, HinfMethod::GridOnly), hinf_norm(sys), 1e-5);
}

namespace {

PlantRealization system2() {
  return {s(0.8), s(1.0), s(1.0), s(0.1), s(1.0), s(0.0)};
}

}  // namespace

TEST(ErrorSystem, PassThroughIsZero) {
  Gen g(75);
  PlantRealization pl{g.matrix(2, 2, 0.3), g.matrix(2, 1), g.matrix(1, 2), g.matrix(1, 1),
                      Matrix(), Matrix()};
  pl.c_p = pl.c_y;
  pl.d_p = pl.d_yp;
  const Estimator est{zeros(2, 2), zeros(2, 1), zeros(1, 2), identity(1)};
  const StateSpace e = closed_loop_error_system(pl, est);
  EXPECT_EQ(e.states(), 4);
  EXPECT_LE(max_abs(e.c), 1e-15);
  EXPECT_LE(max_abs(e.d), 1e-15);
  EXPECT_NEAR(hinf_norm(e, 1e-6, HinfMethod::GridOnly), 0.0, 1e-12);
}

TEST(ErrorSystem, ZeroEstimatorGivesPlantChannel) {
  Gen g(76);
  PlantRealization pl{g.matrix(2, 2, 0.3), g.matrix(2, 2), g.matrix(1, 2), g.matrix(1, 2),
                      g.matrix(1, 2), g.matrix(1, 2)};
  const Estimator est{zeros(2, 2), zeros(2, 1), zeros(1, 2), zeros(1, 1)};
  const StateSpace e = closed_loop_error_system(pl, est);
  const StateSpace plant{pl.a, pl.b_p, pl.c_p, pl.d_p};
  for (double w : {0.0, 0.4, 1.3, 3.0}) {
    EXPECT_NEAR(frequency_gain(e, w), frequency_gain(plant, w), 1e-12);
  }
  EXPECT_NEAR(hinf_norm(e), hinf_norm(plant), 1e-6);
}

TEST(ErrorSystem, ScalarTransferFunctionOracle) {
  // e(z) = G_p(z) - K(z) G_y(z), all scalar.
  const PlantRealization pl = system2();
  const double ae = 0.5, be = 0.3, ce = 1.0, de = 0.4;
  const Estimator est{s(ae), s(be), s(ce), s(de)};
  const StateSpace e = closed_loop_error_system(pl, est);
  auto oracle = [&](double w) {
    const std::complex<double> z = std::polar(1.0, w);
    const auto gp = 1.0 / (z - 0.8);        // C_p (z - A)^{-1} B_p + D_p
    const auto gy = 1.0 / (z - 0.8) + 0.1;  // C_y (z - A)^{-1} B_p + D_yp
    const auto k = ce * be / (z - ae) + de;
    return std::abs(gp - k * gy);
  };
  double peak = 0.0;
  for (int i = 0; i <= 20000; ++i) {
    const double w = std::numbers::pi * i / 20000.0;
    ASSERT_NEAR(frequency_gain(e, w), oracle(w), 1e-8);
    peak = std::max(peak, oracle(w));
  }
  EXPECT_NEAR(hinf_norm(e), peak, 1e-6 * peak + 1e-8);
}

TEST(ErrorSystem, DimensionMismatch) {
  const Estimator est{zeros(2, 2), zeros(2, 1), zeros(1, 2), zeros(1, 1)};
  try {
    closed_loop_error_system(system2(), est);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
}

TEST(Series, CascadeFrequencyResponse) {
  Gen g(77);
  const StateSpace g1 = random_stable(g, 2, 1, 1);
  const StateSpace g2 = random_stable(g, 3, 1, 1);
  const StateSpace both = series(g1, g2);
  for (double w : {0.0, 0.7, 2.5}) {
    EXPECT_NEAR(frequency_gain(both, w), frequency_gain(g1, w) * frequency_gain(g2, w), 1e-10);
  }
}

TEST(SampleMembers, UnitBall) {
  const Qmi ball = from_center_shape(s(1), s(1), s(0));
  const auto pts = sample_members(ball, 100, 3);
  ASSERT_EQ(pts.size(), 100u);
  EXPECT_EQ(pts.front()(0, 0), 0.0);
  int boundary = 0;
  for (const auto& t : pts) {
    EXPECT_LE(std::abs(t(0, 0)), 1.0);
    if (std::abs(t(0, 0)) >= 0.99) ++boundary;
  }
  EXPECT_GE(boundary, 10);
}

TEST(SampleMembers, DegenerateRadius) {
  Gen g(78);
  const Matrix c = g.matrix(2, 3);
  const Qmi point = from_center_shape(identity(2), zeros(3, 3), c);
  for (const auto& t : sample_members(point, 20, 1)) EXPECT_LE(max_abs(t - c), 1e-12);
}

TEST(SampleMembers, Unbounded) {
  Matrix pi = Matrix::Zero(2, 2);
  pi(0, 0) = 1;
  pi(1, 1) = 1;
  try {
    sample_members(Qmi(1, 1, pi, Orientation::Primal), 5, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Unbounded);
  }
}

TEST(SampleMembers, PropertyAllContained) {
  Gen g(79);
  for (int trial = 0; trial < 200; ++trial) {
    const int p = g.integer(1, 3), n = g.integer(1, 4);
    const Qmi q = from_center_shape(g.pd(p), g.pd(n), g.matrix(p, n));
    const auto pts = sample_members(q, 30, static_cast<std::uint64_t>(trial));
    ASSERT_EQ(pts.size(), 30u);
    int on_boundary = 0;
    for (const auto& t : pts) {
      ASSERT_TRUE(contains(q, t, 1e-9)) << "trial " << trial;
      if (min_eigenvalue(evaluate(q, t)) < 1e-6 * std::max(1.0, max_abs(q.matrix()))) ++on_boundary;
    }
    EXPECT_GE(on_boundary, 3);
  }
}

TEST(SampleMembers, Deterministic) {
  Gen g(80);
  const Qmi q = from_center_shape(g.pd(2), g.pd(3), g.matrix(2, 3));
  const auto a = sample_members(q, 10, 42);
  const auto b = sample_members(q, 10, 42);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}
