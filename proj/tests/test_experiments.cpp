#include <gtest/gtest.h>

#include <filesystem>

#include "qmiest/experiments.hpp"
#include "support/gen.hpp"

using namespace qmiest;
using qmiest::testing::Gen;
namespace fs = std::filesystem;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::InvalidArgument;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qmiest_exp_" + name);
  fs::remove_all(p);
  return p;
}

// Small, fast variant of system 2 for table-level tests.
ScenarioConfig quick2(std::uint64_t seed) {
  ScenarioConfig c = example_config(2);
  c.seed = seed;
  c.validation_samples = 5;
  c.threads = 1;
  return c;
}

}  // namespace

TEST(ExampleConfig, SystemOneParameters) {
  const ScenarioConfig c = example_config(1);
  EXPECT_EQ(c.n_samples, 50);
  EXPECT_EQ(c.beta, 0.15);
  EXPECT_EQ(c.alpha_w, 0.0005);
  EXPECT_EQ(c.alpha_v, 0.0005);
  EXPECT_EQ(c.x0_range.lo, -2.0);
  EXPECT_EQ(c.wp_range.hi, 2.0);
  EXPECT_EQ(c.a, io::parse_matrix("0.7 0; 0.3 0.7"));
  EXPECT_EQ(c.b_p, io::parse_matrix("1 0; 0 0"));
  EXPECT_EQ(c.c_y, io::parse_matrix("0 1"));
  EXPECT_EQ(c.d_yp, io::parse_matrix("0 1"));
  EXPECT_EQ(c.c_p, identity(2));
  EXPECT_EQ(c.epsilon, 0.1);
  EXPECT_EQ(c.ball_scale, 1.04);
}

TEST(ExampleConfig, SystemTwoParameters) {
  const ScenarioConfig c = example_config(2);
  EXPECT_EQ(c.n_samples, 10);
  EXPECT_EQ(c.alpha_w, 0.6);
  EXPECT_EQ(c.beta, 0.1);
  EXPECT_EQ(c.x0_range.lo, -10.0);
  EXPECT_EQ(c.x0_range.hi, 10.0);
  EXPECT_EQ(c.wp_range.lo, -4.0);
  EXPECT_EQ(c.wp_range.hi, 6.0);
  EXPECT_EQ(c.a(0, 0), 0.8);
  EXPECT_EQ(c.d_yp(0, 0), 0.1);
  ASSERT_EQ(c.structural.size(), 1u);
  EXPECT_EQ(code_of([] { example_config(3); }), Errc::InvalidArgument);
}

TEST(ExampleConfig, TrueSystemSatisfiesEveryStructuralConstraint) {
  for (int ex : {1, 2}) {
    for (SumColumn sc : {SumColumn::A, SumColumn::Bp}) {
      const ScenarioConfig c = example_config(ex, sc);
      for (const auto& s : c.structural) {
        const Matrix theta = s.block == RowBlock::AB ? c.theta_ab() : c.theta_cd();
        const Matrix v = s.e * theta * s.f + s.gc;
        EXPECT_LE(v.norm(), 1e-12) << s.label;
      }
    }
  }
}

TEST(ExampleConfig, EntryTwoOneWithinOnePercent) {
  const ScenarioConfig c = example_config(1);
  const auto it = std::find_if(c.structural.begin(), c.structural.end(),
                               [](const auto& s) { return s.label == "A21 within 1%"; });
  ASSERT_NE(it, c.structural.end());
  // selects theta(1, 0) of [A B_p], i.e. A(2,1) in one-based terms
  Matrix probe = Matrix::Zero(2, 4);
  probe(1, 0) = 1.0;
  EXPECT_EQ((it->e * probe * it->f)(0, 0), 1.0);
  probe.setOnes();
  probe(1, 0) = 0.0;
  EXPECT_EQ((it->e * probe * it->f)(0, 0), 0.0);
  EXPECT_EQ(it->gc(0, 0), -0.3);
  EXPECT_NEAR(it->eps, 0.01 * 0.3, 1e-15);
}

TEST(ExampleConfig, EntryTwoOneQmiBoundsThatEntry) {
  // The reparameterized set pins A(2,1) to 0.3 +- eps (1 + epsilon) along the
  // selected entry, independent of the other entries.
  ScenarioConfig c = example_config(1);
  const Dataset d = generate_data(c);
  c.structural = {c.structural.back()};
  c.priors = {PriorKind::Ball};
  const SetBundle sb = build_sets(c, d);
  const Qmi& q = sb.columns.at(PriorKind::Ball).ab.structural.at(0);
  // Q' = E'E weights row 2 only: no bounded center, row 1 is free
  EXPECT_FALSE(is_bounded(q));
  Matrix center = sb.columns.at(PriorKind::Ball).ab.theta_bar;
  center(1, 0) = 0.3;
  const double half = 0.003 * 1.1;
  Gen g(12);
  for (double f : {0.99, -0.99, 0.0}) {
    Matrix t = center;
    t(1, 0) += f * half;
    EXPECT_TRUE(contains(q, t, 1e-12)) << f;
    t.row(0) += g.matrix(1, 4, 10.0);
    EXPECT_TRUE(contains(q, t, 1e-12)) << f;
  }
  for (double f : {1.01, -1.01}) {
    Matrix t = center;
    t(1, 0) += f * half;
    EXPECT_FALSE(contains(q, t)) << f;
  }
}

TEST(Config, RoundTripThroughKeyValues) {
  for (int ex : {1, 2}) {
    ScenarioConfig c = example_config(ex);
    c.seed = 77;
    c.priors = {PriorKind::Ball, PriorKind::Combined};
    c.objective = QhatObjective::LogDet;
    const ScenarioConfig back = parse_config(config_key_values(c));
    EXPECT_EQ(config_key_values(back), config_key_values(c));
    EXPECT_EQ(back.a, c.a);
    EXPECT_EQ(back.structural.size(), c.structural.size());
  }
}

TEST(Config, ExampleKeyWithOverrides) {
  const auto kv = io::parse_key_values(
      "example = 2\nseed = 9\ndata.N = 4\nrun.priors = ball, combined\n"
      "run.constraints = none,data\nreparam.rhat_scaling = inverse\n");
  const ScenarioConfig c = parse_config(kv);
  EXPECT_EQ(c.name, "example2");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.n_samples, 4);
  EXPECT_EQ(c.priors, (std::vector<PriorKind>{PriorKind::Ball, PriorKind::Combined}));
  EXPECT_EQ(c.constraints, (std::vector<ConstraintKind>{ConstraintKind::None, ConstraintKind::Data}));
  EXPECT_EQ(c.rhat_scaling, RhatScaling::Inverse);
  EXPECT_EQ(c.beta, 0.1);
}

TEST(Config, SumColumnSwitch) {
  const auto c = parse_config(io::parse_key_values("example = 1\nexample1.sum_column = Bp\n"));
  const auto& s = c.structural.at(6);
  EXPECT_EQ(s.label, "Bp11 + Bp21 = 1");
  EXPECT_EQ(s.f(2, 0), 1.0);
}

TEST(Config, StructuralKeysReplaceList) {
  const auto c = parse_config(io::parse_key_values(
      "example = 2\nstructural.0.block = AB\nstructural.0.E = 1\nstructural.0.F = 1; 0\n"
      "structural.0.Gc = -0.8\nstructural.0.eps = 0.008\n"));
  ASSERT_EQ(c.structural.size(), 1u);
  EXPECT_EQ(c.structural[0].gc(0, 0), -0.8);
}

TEST(Config, Errors) {
  EXPECT_EQ(code_of([] { parse_config(io::parse_key_values("example = 2\nbogus = 1\n")); }),
            Errc::Parse);
  EXPECT_EQ(code_of([] { parse_config(io::parse_key_values("example = 2\nrun.priors = foo\n")); }),
            Errc::Parse);
  EXPECT_EQ(code_of([] { parse_config(io::parse_key_values("example = 2\ndata.alpha = -1\n")); }),
            Errc::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_config(io::parse_key_values("example = 2\ndata.x0_range = 1 -1\n")); }),
            Errc::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_config(io::parse_key_values("example = 2\nsystem.Bp = 1 2\n")); }),
            Errc::DimensionMismatch);
  EXPECT_EQ(code_of([] { parse_config(io::parse_key_values("example = 2\nstructural.0.F = 1\n")); }),
            Errc::DimensionMismatch);
}

TEST(Data, SamplesObeyTheModelAndBounds) {
  for (int ex : {1, 2}) {
    const ScenarioConfig c = example_config(ex);
    const Dataset d = generate_data(c);
    ASSERT_EQ(d.size(), c.n_samples);
    for (int k = 0; k < d.size(); ++k) {
      const Vector w = d.x_next.col(k) - c.a * d.x.col(k) - c.b_p * d.wp.col(k);
      const Vector v = d.y.col(k) - c.c_y * d.x.col(k) - c.d_yp * d.wp.col(k);
      EXPECT_LE(w.norm(), c.alpha_w * (1 + 1e-12));
      EXPECT_LE(v.norm(), c.alpha_v * (1 + 1e-12));
      EXPECT_GE(d.wp.col(k).minCoeff(), c.wp_range.lo);
      EXPECT_LE(d.wp.col(k).maxCoeff(), c.wp_range.hi);
      if (k > 0) EXPECT_EQ(d.x.col(k), d.x_next.col(k - 1));
    }
    EXPECT_GE(d.x.col(0).minCoeff(), c.x0_range.lo);
    EXPECT_LE(d.x.col(0).maxCoeff(), c.x0_range.hi);
  }
}

TEST(Data, NoiseFillsTheBall) {
  // radius alpha u^(1/dim): about half the draws beyond 2^(-1/dim) alpha
  ScenarioConfig c = example_config(1);
  c.n_samples = 2000;
  const Dataset d = generate_data(c);
  int outer = 0;
  for (int k = 0; k < d.size(); ++k) {
    const Vector w = d.x_next.col(k) - c.a * d.x.col(k) - c.b_p * d.wp.col(k);
    outer += w.norm() > std::pow(0.5, 0.5) * c.alpha_w;
  }
  EXPECT_NEAR(outer / 2000.0, 0.5, 0.05);
}

TEST(Data, DeterministicAndFilesAreByteIdentical) {
  const ScenarioConfig c = example_config(2);
  const Dataset a = generate_data(c);
  const Dataset b = generate_data(c);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  const fs::path d1 = scratch("d1"), d2 = scratch("d2");
  write_dataset(d1, a);
  write_dataset(d2, b);
  for (const char* f : {"x.csv", "x_next.csv", "y.csv", "wp.csv"}) {
    EXPECT_EQ(io::read_file(d1 / f), io::read_file(d2 / f)) << f;
  }
  const Dataset back = read_dataset(d1);
  EXPECT_EQ(back.x_next, a.x_next);
  EXPECT_EQ(back.wp, a.wp);
  ScenarioConfig other = c;
  other.seed = c.seed + 1;
  EXPECT_NE(generate_data(other).x, a.x);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Data, TinyNoiseCollapsesStackedPrior) {
  ScenarioConfig c = example_config(2);
  c.alpha_w = c.alpha_v = 1e-9;
  const Dataset d = generate_data(c);
  const Qmi prior = prior_from_data(block_samples(c, d, RowBlock::AB));
  EXPECT_LE((*bounded_center(prior) - c.theta_ab()).norm(), 1e-6);
}

TEST(Data, ZeroRegressorIsRankDeficient) {
  ScenarioConfig c = example_config(2);
  c.priors = {PriorKind::Ball};
  Dataset d = generate_data(c);
  d.x(0, 3) = 0.0;
  d.wp(0, 3) = 0.0;
  EXPECT_EQ(code_of([&] { build_sets(c, d); }), Errc::RankDeficient);
}

TEST(Sets, PropertyTrueSystemInEveryBuiltSet) {
  for (int ex : {1, 2}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      ScenarioConfig c = example_config(ex);
      c.seed = seed;
      const SetBundle sb = build_sets(c, generate_data(c));
      const Matrix truth[2] = {c.theta_ab(), c.theta_cd()};
      for (int i = 0; i < 2; ++i) {
        EXPECT_TRUE(contains(sb.stacked[i], truth[i], 1e-9));
        EXPECT_TRUE(contains(sb.ball[i], truth[i], 1e-9));
        EXPECT_TRUE(contains(sb.informativity[i], truth[i], 1e-9));
      }
      for (const auto& [pk, cs] : sb.columns) {
        int k = 0;
        for (const BlockSets* b : {&cs.ab, &cs.cd}) {
          for (const auto& q : b->data) EXPECT_TRUE(contains(q, truth[k], 1e-9)) << to_string(pk);
          for (const auto& q : b->structural)
            EXPECT_TRUE(contains(q, truth[k], 1e-9)) << to_string(pk);
          ++k;
        }
      }
    }
  }
}

TEST(Sets, CombinedColumnContainsEveryOtherColumn) {
  const ScenarioConfig c = example_config(2);
  const SetBundle sb = build_sets(c, generate_data(c));
  const ColumnSets& cc = sb.columns.at(PriorKind::Combined);
  EXPECT_EQ(cc.ab.priors.size(), 3u);
  std::size_t data = 0, structural = 0;
  for (PriorKind pk : {PriorKind::Stacked, PriorKind::Ball, PriorKind::Informativity}) {
    data += sb.columns.at(pk).ab.data.size();
    structural += sb.columns.at(pk).ab.structural.size();
  }
  // own per-sample sets plus those of the three single-prior columns
  EXPECT_EQ(cc.ab.data.size(), data + static_cast<std::size_t>(c.n_samples));
  EXPECT_EQ(cc.ab.structural.size(), structural + 1);
}

TEST(Sets, PropertyCombinedPriorImpliesEachPrior) {
  const ScenarioConfig c = example_config(2);
  const SetBundle sb = build_sets(c, generate_data(c));
  const auto& pr = sb.columns.at(PriorKind::Combined).ab.priors;
  Gen g(11);
  int inside = 0;
  for (int i = 0; i < 4000; ++i) {
    const Matrix t = c.theta_ab() + g.in_ball(1, 2, 0.3);
    bool all = true;
    for (const auto& q : pr) all = all && contains(q, t);
    if (!all) continue;
    ++inside;
    EXPECT_TRUE(contains(sb.stacked[0], t));
    EXPECT_TRUE(contains(sb.ball[0], t));
    EXPECT_TRUE(contains(sb.informativity[0], t));
  }
  EXPECT_GT(inside, 20);
}

TEST(Plant, RowsSelectExtraQmis) {
  const ScenarioConfig c = example_config(2);
  const SetBundle sb = build_sets(c, generate_data(c));
  const ColumnSets& cs = sb.columns.at(PriorKind::Ball);
  EXPECT_EQ(make_plant(c, cs, ConstraintKind::None).extra_qmis.size(), 0u);
  EXPECT_EQ(make_plant(c, cs, ConstraintKind::Data).extra_qmis.size(), 20u);
  EXPECT_EQ(make_plant(c, cs, ConstraintKind::Prior).extra_qmis.size(), 1u);
  EXPECT_EQ(make_plant(c, cs, ConstraintKind::Combined).extra_qmis.size(), 21u);
  const auto pl = make_plant(c, sb.columns.at(PriorKind::Combined), ConstraintKind::None);
  EXPECT_EQ(pl.extra_qmis.size(), 4u);  // two more priors per block
}

TEST(Table, CsvAndMarkdownLayout) {
  ResultTable t;
  t.name = "demo";
  t.priors = {PriorKind::Stacked, PriorKind::Ball};
  t.constraints = {ConstraintKind::None, ConstraintKind::Data};
  for (auto k : t.constraints)
    for (auto p : t.priors) {
      CellResult r{p, k};
      r.status = "ok";
      r.gamma = 1.0 / (1.0 + static_cast<int>(p) + 2 * static_cast<int>(k));
      t.cells.push_back(r);
    }
  t.cells.back().status = "infeasible";
  EXPECT_EQ(t.to_csv(),
            "constraints,stacked,ball\nnone,1.000000,0.500000\ndata,0.333333,infeasible\n");
  const std::string md = t.to_markdown();
  EXPECT_NE(md.find("| ∅   | 1.000"), std::string::npos) << md;
  EXPECT_NE(md.find("| 0.333 "), std::string::npos) << md;
  t.cells.front().gamma = 1.123899;  // rounded, not cut
  EXPECT_NE(t.to_markdown().find("| 1.124 "), std::string::npos);
  EXPECT_NE(md.find("infeasible"), std::string::npos);
}

TEST(Table, InfeasibleCellIsRecordedNotThrown) {
  ScenarioConfig c = quick2(1);
  c.beta = 0.5;  // ball reaches unstable A
  c.priors = {PriorKind::Ball};
  c.constraints = {ConstraintKind::None};
  const ResultTable t = run_scenario(c);
  EXPECT_EQ(t.at(ConstraintKind::None, PriorKind::Ball).status, "infeasible");
  EXPECT_EQ(t.to_csv(), "constraints,ball\nnone,infeasible\n");
}

TEST(Table, SystemTwoCellsAreCertifiedAndMonotone) {
  const ScenarioConfig c = quick2(7);
  const ResultTable t = run_scenario(c);
  for (const auto& cell : t.cells) {
    ASSERT_TRUE(cell.ok()) << to_string(cell.prior) << "/" << to_string(cell.constraints) << " "
                           << cell.message;
    EXPECT_TRUE(cell.certified) << cell.message;
    EXPECT_TRUE(cell.validated);
  }
  for (auto p : c.priors) {
    const double none = t.at(ConstraintKind::None, p).gamma;
    const double data = t.at(ConstraintKind::Data, p).gamma;
    const double prior = t.at(ConstraintKind::Prior, p).gamma;
    const double all = t.at(ConstraintKind::Combined, p).gamma;
    EXPECT_LE(data, none + 1e-6);
    EXPECT_LE(prior, none + 1e-6);
    EXPECT_LE(all, std::min(data, prior) + 1e-6);
  }
  for (auto k : c.constraints) {
    const double comb = t.at(k, PriorKind::Combined).gamma;
    for (auto p : {PriorKind::Stacked, PriorKind::Ball, PriorKind::Informativity}) {
      EXPECT_LE(comb, t.at(k, p).gamma + 1e-6) << to_string(k);
    }
  }
  // data tightens the ball column noticeably
  EXPECT_LT(t.at(ConstraintKind::Data, PriorKind::Ball).gamma,
            0.8 * t.at(ConstraintKind::None, PriorKind::Ball).gamma);
}

TEST(Table, DeterministicAcrossThreadCounts) {
  ScenarioConfig c = quick2(3);
  c.validation_samples = 2;
  const std::string one = run_scenario(c).to_csv();
  c.threads = 3;
  EXPECT_EQ(run_scenario(c).to_csv(), one);
}

TEST(Store, PlantAndResultRoundTrip) {
  const ScenarioConfig c = quick2(5);
  const SetBundle sb = build_sets(c, generate_data(c));
  const UncertainPlant pl = make_plant(c, sb.columns.at(PriorKind::Combined), ConstraintKind::Combined);
  const SynthesisResult res = synthesize(pl);
  const fs::path dir = scratch("store");
  write_plant(dir / "plant", pl);
  write_result(dir / "result", res);
  const UncertainPlant pl2 = read_plant(dir / "plant");
  const SynthesisResult res2 = read_result(dir / "result");
  ASSERT_EQ(pl2.all_qmis().size(), pl.all_qmis().size());
  for (std::size_t i = 0; i < pl.all_qmis().size(); ++i) {
    EXPECT_EQ(pl2.all_qmis()[i].qmi.matrix(), pl.all_qmis()[i].qmi.matrix());
    EXPECT_EQ(pl2.all_qmis()[i].block, pl.all_qmis()[i].block);
  }
  EXPECT_EQ(res2.gamma, res.gamma);
  EXPECT_EQ(res2.estimator.a_e, res.estimator.a_e);
  EXPECT_EQ(res2.multipliers.flattened(), res.multipliers.flattened());
  EXPECT_TRUE(verify_robust_bound(pl2, res2.estimator, res2.gamma).certified);
  fs::remove_all(dir);
}
