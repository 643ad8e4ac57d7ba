#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "eivsc/csv.hpp"
#include "eivsc/panel.hpp"

using namespace eivsc;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) {
    path = (std::filesystem::temp_directory_path() / name).string();
  }
  ~TempFile() { std::remove(path.c_str()); }
  void write(const std::string& content) const {
    std::ofstream out(path);
    out << content;
  }
};

}  // namespace

TEST_CASE("load_panel_csv: default layout (last column treated, last row post)") {
  TempFile f("eivsc_csv_basic.csv");
  f.write(
      "u1,u2,treated\n"
      "1.0,2.0,3.0\n"
      "4.0,5.0,6.0\n"
      "7.0,8.0,9.0\n");
  const auto obs = csv::load_panel_csv(f.path);
  REQUIRE(obs.n() == 2);
  REQUIRE(obs.p() == 2);
  REQUIRE(obs.X(0, 0) == 1.0);
  REQUIRE(obs.X(1, 1) == 5.0);
  REQUIRE(obs.y[0] == 3.0);
  REQUIRE(obs.y[1] == 6.0);
  REQUIRE(obs.x_e[0] == 7.0);
  REQUIRE(obs.x_e[1] == 8.0);
  REQUIRE(obs.y_e == 9.0);
}

TEST_CASE("load_panel_csv: named treated column and explicit post row") {
  TempFile f("eivsc_csv_named.csv");
  f.write(
      "a,b,c\n"
      "1,2,3\n"
      "4,5,6\n"
      "7,8,9\n");
  csv::LayoutConfig layout;
  layout.treated_column = "b";
  layout.post_row = 1;  // middle data row is the post period
  const auto obs = csv::load_panel_csv(f.path, layout);
  REQUIRE(obs.p() == 2);
  REQUIRE(obs.y_e == 5.0);
  REQUIRE(obs.x_e[0] == 4.0);
  REQUIRE(obs.x_e[1] == 6.0);
  REQUIRE(obs.y[0] == 2.0);
  REQUIRE(obs.y[1] == 8.0);
}

TEST_CASE("load_panel_csv: errors carry file coordinates") {
  TempFile f("eivsc_csv_bad.csv");
  f.write(
      "a,b,c\n"
      "1,2,3\n"
      "4,5,6\n"
      "7,oops,9\n");
  try {
    csv::load_panel_csv(f.path);
    FAIL("expected CsvError");
  } catch (const csv::CsvError& e) {
    const std::string what = e.what();
    REQUIRE(what.find("row 4") != std::string::npos);
    REQUIRE(what.find("column 2") != std::string::npos);
  }
}

TEST_CASE("load_panel_csv: missing file, ragged rows, too few rows") {
  REQUIRE_THROWS_AS(csv::load_panel_csv("/nonexistent/path.csv"), csv::CsvError);

  TempFile ragged("eivsc_csv_ragged.csv");
  ragged.write("a,b\n1,2\n3\n4,5\n");
  REQUIRE_THROWS_AS(csv::load_panel_csv(ragged.path), csv::CsvError);

  TempFile short_file("eivsc_csv_short.csv");
  short_file.write("a,b\n1,2\n");
  REQUIRE_THROWS_AS(csv::load_panel_csv(short_file.path), csv::CsvError);

  TempFile unknown("eivsc_csv_unknown.csv");
  unknown.write("a,b\n1,2\n3,4\n");
  csv::LayoutConfig layout;
  layout.treated_column = "zzz";
  REQUIRE_THROWS_AS(csv::load_panel_csv(unknown.path, layout), csv::CsvError);
}

TEST_CASE("write-then-read round trip reproduces a generated panel") {
  panel::SignalSpec spec;
  spec.rank = 2;
  spec.singular_values = {5.0, 1.5};
  const auto draw = panel::generate_signal(spec, 9, 4, 99);
  panel::GroundTruth truth{draw.A, draw.b, draw.a_e, draw.b_e, 0.4,
                           panel::NoiseSpec::iid_columns(9, 4, 0.7, 1)};
  const auto obs = panel::generate_panel(truth, 123);

  TempFile f("eivsc_csv_roundtrip.csv");
  csv::save_panel_csv(obs, f.path);
  const auto back = csv::load_panel_csv(f.path);
  REQUIRE(back.n() == obs.n());
  REQUIRE(back.p() == obs.p());
  REQUIRE((back.X - obs.X).cwiseAbs().maxCoeff() <= 1e-12);
  REQUIRE((back.y - obs.y).cwiseAbs().maxCoeff() <= 1e-12);
  REQUIRE((back.x_e - obs.x_e).cwiseAbs().maxCoeff() <= 1e-12);
  REQUIRE(back.y_e == Catch::Approx(obs.y_e).margin(1e-12));
}
