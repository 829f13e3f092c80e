// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// The determinism criterion drives the built CLI twice through the shell.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "qmiest/selftest.hpp"

#ifndef QMIEST_CLI
#error "QMIEST_CLI must name the qmiest executable"
#endif

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  using namespace qmiest;
  selftest::Options opt;
  for (int i = 1; i < argc; ++i) opt.only.insert(std::atoi(argv[i]));

  const fs::path scratch = fs::temp_directory_path() / "qmiest_acceptance";
  opt.reproduce_csv = [&](int run) -> std::string {
    const fs::path out = scratch / ("run" + std::to_string(run));
    fs::remove_all(out);
    const std::string cmd = std::string("\"") + QMIEST_CLI +
                            "\" reproduce --example 2 --seed 7 --out \"" + out.string() +
                            "\" > \"" + (scratch / "log.txt").string() + "\" 2>&1";
    fs::create_directories(scratch);
    if (std::system(cmd.c_str()) != 0) return {};
    return io::read_file(out / "table.csv");
  };
  int failed = 0;
  opt.on_verdict = [&](const selftest::Verdict& v) {
    std::cout << v.line() << std::endl;
    failed += !v.pass;
  };
  const auto verdicts = selftest::run(opt);
  std::cout << (failed == 0 ? "ALL PASS" : "FAILED") << " (" << verdicts.size() - failed << "/"
            << verdicts.size() << ")" << std::endl;
  return failed == 0 ? 0 : 1;
}
