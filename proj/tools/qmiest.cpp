// qmiest: data generation, set construction, synthesis, re-checking and the
// full prior x constraint-set table from the command line.
//
// Exit codes: 0 success, 1 failure (diagnostic on stderr), 2 stored result
// refuted by `validate`.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "qmiest/experiments.hpp"
#include "qmiest/selftest.hpp"

namespace fs = std::filesystem;
using namespace qmiest;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int example = 0;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "key = value scenario file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "data seed (overrides the config)");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
  cmd->add_option("--example", c.example, "start from example system 1 or 2")->check(CLI::Range(1, 2));
}

// --example, then the file on top, then --seed.
ScenarioConfig load(const Common& c, int fallback_example = 0) {
  io::KeyValues kv;
  const int ex = c.example ? c.example : fallback_example;
  if (ex) kv["example"] = std::to_string(ex);
  if (!c.config.empty()) {
    for (auto& [k, v] : io::parse_key_values(io::read_file(c.config), c.config)) kv[k] = v;
    if (c.example) kv["example"] = std::to_string(c.example);
  }
  require(!kv.empty(), Errc::InvalidArgument, "give --config FILE or --example {1|2}");
  ScenarioConfig cfg = parse_config(kv);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void write_config(const fs::path& dir, const ScenarioConfig& cfg) {
  io::write_file(dir / "config.txt", io::format_key_values(config_key_values(cfg)));
}

Dataset dataset_for(const ScenarioConfig& cfg, const std::string& data_dir) {
  return data_dir.empty() ? generate_data(cfg) : read_dataset(data_dir);
}

std::string cell_dir(PriorKind p, ConstraintKind k) { return to_string(p) + "/" + to_string(k); }

int gen_data(const Common& c) {
  const ScenarioConfig cfg = load(c);
  const Dataset d = generate_data(cfg);
  write_dataset(c.out, d);
  write_config(c.out, cfg);
  std::cout << "wrote " << d.size() << " samples to " << c.out << "\n";
  return 0;
}

int build_sets_cmd(const Common& c, const std::string& data_dir) {
  const ScenarioConfig cfg = load(c);
  QhatCache cache;
  const SetBundle sb = build_sets(cfg, dataset_for(cfg, data_dir), &cache);
  for (auto p : cfg.priors) {
    for (auto k : cfg.constraints) {
      const UncertainPlant pl = make_plant(cfg, sb.columns.at(p), k);
      write_plant(fs::path(c.out) / cell_dir(p, k), pl);
      std::cout << cell_dir(p, k) << ": " << pl.all_qmis().size() << " QMIs\n";
    }
  }
  write_config(c.out, cfg);
  return 0;
}

int synth_cmd(const Common& c, const std::string& data_dir, const std::string& plant_dir,
              const std::string& prior, const std::string& constraints) {
  UncertainPlant pl;
  if (!plant_dir.empty()) {
    pl = read_plant(plant_dir);
  } else {
    ScenarioConfig cfg = load(c);
    const PriorKind p = parse_prior_kind(prior);
    const ConstraintKind k = parse_constraint_kind(constraints);
    cfg.priors = {p};
    if (p == PriorKind::Combined) cfg.priors = {std::begin(kAllPriors), std::end(kAllPriors)};
    QhatCache cache;
    const SetBundle sb = build_sets(cfg, dataset_for(cfg, data_dir), &cache);
    pl = make_plant(cfg, sb.columns.at(p), k);
    write_config(c.out, cfg);
  }
  const SynthesisResult r = synthesize(pl);
  write_plant(fs::path(c.out) / "plant", pl);
  write_result(fs::path(c.out) / "result", r);
  std::printf("gamma %.6f (%s, %d iterations, %zu QMIs)\n", r.gamma,
              r.solver_report.solver_status.c_str(), r.solver_report.iterations, pl.all_qmis().size());
  return 0;
}

int validate_cmd(const Common& c, const std::string& in, int samples) {
  const UncertainPlant pl = read_plant(fs::path(in) / "plant");
  const SynthesisResult r = read_result(fs::path(in) / "result");
  ScenarioConfig cfg;
  if (!c.config.empty() || c.example) cfg = load(c);
  if (samples <= 0) samples = cfg.validation_samples;
  const std::uint64_t seed = c.seed.value_or(cfg.seed);

  const RobustBoundCheck cert = verify_robust_bound(pl, r.estimator, r.gamma);
  const ValidationReport rep = validate_by_sampling(pl, r, samples, seed);
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "claimed gamma %.6f\n"
                "certificate: %s (smallest certifiable gamma %.6f)\n  %s\n"
                "sampling: %s (%d plants, %d unstable, worst norm %.6f, ratio %.4f)\n",
                r.gamma, cert.certified ? "holds" : "REFUTED", cert.gamma_min, cert.report.c_str(),
                rep.pass ? "holds" : "REFUTED", rep.samples, rep.unstable, rep.max_norm, rep.max_ratio);
  std::string report = buf;
  const bool ok = cert.certified && rep.pass;
  report += ok ? "result: valid\n" : "result: refuted\n";
  std::cout << report;
  if (!c.out.empty()) io::write_file(fs::path(c.out) / "report.txt", report);
  return ok ? 0 : 2;
}

struct Reproduced {
  ResultTable table;
  double seconds = 0.0;
};

Reproduced reproduce_table(const ScenarioConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  Reproduced r{run_scenario(cfg)};
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

int reproduce_cmd(const Common& c, int threads) {
  ScenarioConfig cfg = load(c);
  if (threads > 0) cfg.threads = threads;
  const Reproduced r = reproduce_table(cfg);
  const fs::path out(c.out);
  io::write_file(out / "table.csv", r.table.to_csv());
  io::write_file(out / "table.md", r.table.to_markdown());
  io::write_file(out / "details.csv", r.table.details_csv());
  write_config(out, cfg);
  std::cout << r.table.to_markdown();
  int unsound = 0;
  for (const auto& cell : r.table.cells) {
    if (cell.status == "error" || (cell.ok() && !(cell.certified && cell.validated))) {
      ++unsound;
      std::cerr << cell_dir(cell.prior, cell.constraints) << ": " << cell.status << " "
                << cell.message << "\n";
    }
  }
  std::fprintf(stderr, "%zu cells in %.1f s\n", r.table.cells.size(), r.seconds);
  return unsound == 0 ? 0 : 1;
}

int selftest_cmd(const Common& c, const std::vector<int>& only) {
  selftest::Options opt;
  if (c.seed) opt.seed = *c.seed;
  if (!c.config.empty() || c.example) {
    Common base = c;
    base.seed.reset();
    opt.scenario = load(base);
  }
  opt.only.insert(only.begin(), only.end());
  opt.reproduce_csv = [&](int) {
    ScenarioConfig cfg = opt.scenario;
    cfg.seed = 7;
    return reproduce_table(cfg).table.to_csv();
  };
  std::string log;
  opt.on_verdict = [&](const selftest::Verdict& v) {
    std::cout << v.line() << std::endl;
    log += v.line() + "\n";
  };
  const auto verdicts = selftest::run(opt);
  if (!c.out.empty()) io::write_file(fs::path(c.out) / "selftest.txt", log);
  for (const auto& v : verdicts)
    if (!v.pass) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust estimator synthesis from noisy data and prior knowledge"};
  app.require_subcommand(1);

  Common gen, sets, syn, val, rep, self;
  std::string sets_data, syn_data, syn_plant, syn_prior = "combined", syn_constraints = "combined";
  std::string val_in;
  int val_samples = 0, rep_threads = 0;
  std::vector<int> self_only;

  auto* g = app.add_subcommand("gen-data", "simulate the data set and write it as CSV");
  add_common(g, gen, true);

  auto* b = app.add_subcommand("build-sets", "write the QMI bundle of every selected cell");
  add_common(b, sets, true);
  b->add_option("--data", sets_data, "read the data set from this directory")->check(CLI::ExistingDirectory);

  auto* s = app.add_subcommand("synth", "synthesize the estimator of one cell");
  add_common(s, syn, true);
  s->add_option("--data", syn_data, "read the data set from this directory")->check(CLI::ExistingDirectory);
  s->add_option("--plant", syn_plant, "use a stored QMI bundle instead of building one")
      ->check(CLI::ExistingDirectory);
  s->add_option("--prior", syn_prior, "stacked | ball | informativity | combined");
  s->add_option("--constraints", syn_constraints, "none | data | prior | combined");

  auto* v = app.add_subcommand("validate", "re-check a stored synthesis result");
  add_common(v, val, false);
  v->add_option("--in", val_in, "directory written by synth")->required()->check(CLI::ExistingDirectory);
  v->add_option("--samples", val_samples, "sampled plants (default: run.validation_samples)");

  auto* r = app.add_subcommand("reproduce", "run the full prior x constraint-set table");
  add_common(r, rep, true);
  r->add_option("--threads", rep_threads, "worker threads (default: hardware)");

  auto* t = app.add_subcommand("selftest", "run the acceptance property suites");
  add_common(t, self, false);
  t->add_option("--only", self_only, "criterion numbers to run")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) return gen_data(gen);
    if (*b) return build_sets_cmd(sets, sets_data);
    if (*s) return synth_cmd(syn, syn_data, syn_plant, syn_prior, syn_constraints);
    if (*v) return validate_cmd(val, val_in, val_samples);
    if (*r) {
      if (rep.config.empty() && !rep.example) {
        std::cerr << "error: reproduce needs --example {1|2} or --config FILE\n";
        return 1;
      }
      return reproduce_cmd(rep, rep_threads);
    }
    if (*t) return selftest_cmd(self, self_only);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
