#include <doctest.h>

#include "balancegauge/common.hpp"
#include "balancegauge/csv.hpp"

#include "helpers.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <string>

using namespace bg;

TEST_CASE("csv round-trip preserves cells and order") {
  bgtest::TempDir dir("csv");
  const std::string path = dir.file("t.csv");
  write_csv(path, {"a", "b", "c"},
            {{"1", "x", "-3.5"}, {"2", "", "0.25"}});
  CsvTable t = read_csv(path);
  REQUIRE(t.header.size() == 3);
  CHECK(t.header[1] == "b");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][2] == "-3.5");
  CHECK(t.rows[1][1] == "");
  CHECK(t.column("c") == 2);
  CHECK(t.column("missing") == -1);
  // Data lines are 1-based and start after the header.
  CHECK(t.line_numbers[0] == 2);
  CHECK(t.line_numbers[1] == 3);
}

TEST_CASE("ragged rows are rejected with their line number") {
  bgtest::TempDir dir("csv");
  const std::string path = dir.file("bad.csv");
  std::ofstream(path) << "a,b\n1,2\n3\n";
  CHECK_THROWS_WITH_AS(read_csv(path), doctest::Contains("line 3"), DataError);
}

TEST_CASE("missing file and empty file are data errors") {
  bgtest::TempDir dir("csv");
  CHECK_THROWS_AS(read_csv(dir.file("nope.csv")), DataError);
  std::ofstream(dir.file("empty.csv")) << "";
  CHECK_THROWS_AS(read_csv(dir.file("empty.csv")), DataError);
}

TEST_CASE("format_double round-trips exactly") {
  for (double v : {0.0, -0.0, 1.0, 0.1, 1.0 / 3.0, -2.5e-17, 9.1,
                   123456789.123456, 1e300, -1e-300,
                   std::numeric_limits<double>::max()}) {
    const std::string s = format_double(v);
    CHECK(parse_double(s, "t") == v);
  }
}

TEST_CASE("format_double writes integers without exponent noise") {
  CHECK(format_double(2.0) == "2");
  CHECK(format_double(-7.0) == "-7");
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("parse_double is strict") {
  CHECK(parse_double("-1.25e2", "t") == -125.0);
  CHECK_THROWS_WITH_AS(parse_double("", "field f"), doctest::Contains("field f"),
                       DataError);
  CHECK_THROWS_AS(parse_double("12x", "t"), DataError);
  CHECK_THROWS_AS(parse_double("nan garbage", "t"), DataError);
  CHECK_THROWS_AS(parse_double("1.5 2.5", "t"), DataError);
}

TEST_CASE("header-only file reads as zero rows") {
  bgtest::TempDir dir("csv");
  const std::string path = dir.file("h.csv");
  std::ofstream(path) << "x,y\n";
  CsvTable t = read_csv(path);
  CHECK(t.header.size() == 2);
  CHECK(t.rows.empty());
}
