#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "qmiest/io.hpp"
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
  const fs::path p = fs::temp_directory_path() / ("qmiest_io_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Number, PropertyRoundTripIsBitExact) {
  Gen g(1);
  for (int i = 0; i < 2000; ++i) {
    const double v = g.normal() * std::pow(10.0, g.integer(-300, 300));
    const double back = io::parse_double(io::format_double(v));
    EXPECT_EQ(std::memcmp(&v, &back, sizeof v), 0) << io::format_double(v);
  }
}

TEST(Number, RejectsGarbage) {
  EXPECT_EQ(code_of([] { io::parse_double("1.5x"); }), Errc::Parse);
  EXPECT_EQ(code_of([] { io::parse_double(""); }), Errc::Parse);
  EXPECT_EQ(code_of([] { io::parse_double("--1"); }), Errc::Parse);
  EXPECT_DOUBLE_EQ(io::parse_double("  -2.5e-3 "), -2.5e-3);
}

TEST(MatrixLiteral, RowsAndSeparators) {
  const Matrix m = io::parse_matrix("0.7 0; 0.3, 0.7");
  ASSERT_EQ(m.rows(), 2);
  ASSERT_EQ(m.cols(), 2);
  EXPECT_EQ(m(0, 0), 0.7);
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_EQ(m(1, 0), 0.3);
  EXPECT_EQ(m(1, 1), 0.7);
  const Matrix col = io::parse_matrix("1; 1; 0; 0");
  EXPECT_EQ(col.rows(), 4);
  EXPECT_EQ(col.cols(), 1);
}

TEST(MatrixLiteral, Errors) {
  EXPECT_EQ(code_of([] { io::parse_matrix("1 2; 3"); }), Errc::Parse);
  EXPECT_EQ(code_of([] { io::parse_matrix(" ; "); }), Errc::Parse);
  EXPECT_EQ(code_of([] { io::parse_matrix("1 a"); }), Errc::Parse);
}

TEST(MatrixLiteral, PropertyFormatParse) {
  Gen g(2);
  for (int i = 0; i < 200; ++i) {
    const Matrix m = g.matrix(g.integer(1, 5), g.integer(1, 5), 1e3);
    EXPECT_EQ(io::parse_matrix(io::format_matrix(m)), m);
  }
}

TEST(Csv, KnownLayout) {
  Matrix m(2, 3);
  m << 1, 2.5, -3, 0, 1e-20, 4;
  EXPECT_EQ(io::matrix_csv(m), "2,3\n1,2.5,-3\n0,1e-20,4\n");
}

TEST(Csv, PropertyRoundTrip) {
  Gen g(3);
  for (int i = 0; i < 200; ++i) {
    const Matrix m = g.matrix(g.integer(0, 6), g.integer(0, 6), std::pow(10.0, g.integer(-8, 8)));
    const Matrix back = io::parse_matrix_csv(io::matrix_csv(m));
    ASSERT_EQ(back.rows(), m.rows());
    ASSERT_EQ(back.cols(), m.cols());
    EXPECT_EQ(back, m);
  }
}

TEST(Csv, ShapeErrors) {
  EXPECT_EQ(code_of([] { io::parse_matrix_csv(""); }), Errc::Parse);
  EXPECT_EQ(code_of([] { io::parse_matrix_csv("2 2\n"); }), Errc::Parse);
  EXPECT_EQ(code_of([] { io::parse_matrix_csv("2,2\n1,2\n"); }), Errc::Parse);
  EXPECT_EQ(code_of([] { io::parse_matrix_csv("1,2\n1,2,3\n"); }), Errc::Parse);
  EXPECT_EQ(code_of([] { io::parse_matrix_csv("1,2\n1\n"); }), Errc::Parse);
}

TEST(Files, WriteCreatesDirectoriesAndReadsBack) {
  const fs::path dir = scratch("files");
  const Matrix m = io::parse_matrix("1 2; 3 4");
  io::write_matrix(dir / "a" / "b" / "m.csv", m);
  EXPECT_EQ(io::read_matrix(dir / "a" / "b" / "m.csv"), m);
  EXPECT_EQ(code_of([&] { io::read_file(dir / "missing.csv"); }), Errc::Io);
  fs::remove_all(dir);
}

TEST(KeyValues, CommentsBlankLinesAndOverride) {
  const auto kv = io::parse_key_values(
      "# header\n\nsystem.A = 0.8   # trailing\n data.N=10\nsystem.A = 0.9\n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("system.A"), "0.9");
  EXPECT_EQ(kv.at("data.N"), "10");
}

TEST(KeyValues, Errors) {
  EXPECT_EQ(code_of([] { io::parse_key_values("just a line\n"); }), Errc::Parse);
  EXPECT_EQ(code_of([] { io::parse_key_values(" = 3\n"); }), Errc::Parse);
}

TEST(KeyValues, FormatParseRoundTrip) {
  io::KeyValues kv{{"a", "1"}, {"b.c", "0.7 0; 0.3 0.7"}, {"run.priors", "stacked,ball"}};
  EXPECT_EQ(io::parse_key_values(io::format_key_values(kv)), kv);
  EXPECT_EQ(io::format_key_values(kv), "a = 1\nb.c = 0.7 0; 0.3 0.7\nrun.priors = stacked,ball\n");
}
