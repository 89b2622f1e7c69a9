#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_support.hpp"

#include "mlca/cli.hpp"
#include "mlca/io.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

using namespace mlca;
using mlca::testing::monotone;
using mlca::testing::quick_config;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mlca_test_io_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

io::ColumnRoles roles_xyz() {
  io::ColumnRoles r;
  r.group = "school";
  r.indicators = {"y1", "y2", "y3"};
  r.low_covariates = {"x"};
  r.high_covariates = {"z"};
  return r;
}

}  // namespace

TEST_CASE("exact number formatting round-trips") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = n(rng);
    CHECK(std::stod(io::format_exact(v)) == v);
  }
  CHECK(io::format_exact(std::nan("")) == "NA");
  CHECK(io::format_fixed(-0.0001, 3) == "0.000");
  CHECK(io::format_fixed(1.23456, 2) == "1.23");
}

TEST_CASE("CSV quoting round-trips") {
  TempDir dir("csv");
  io::CsvTable t;
  t.header = {"a", "b,c", "d\"e"};
  t.rows = {{"1", "x,y", "say \"hi\""}, {"", "2", "3"}};
  io::write_csv(dir.path / "t.csv", t);
  const io::CsvTable back = io::read_csv(dir.path / "t.csv");
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK(back.line_numbers == std::vector<int>{2, 3});
  CHECK(back.column("b,c") == 1);
  CHECK(back.column("zz") == -1);
}

TEST_CASE("simulated data survives a write and load") {
  TempDir dir("data");
  const SimulatedData sim = simulate(cli::default_simulation(5));
  io::write_data(dir.path / "d.csv", sim.data);
  const io::LoadResult r = io::load_data(dir.path / "d.csv", io::roles_of(sim.data));
  CHECK(r.n_rows_dropped == 0);
  CHECK(r.n_rows_read == sim.data.n_units());
  CHECK(r.data.y() == sim.data.y());
  CHECK(r.data.z_low() == sim.data.z_low());
  CHECK(r.data.z_high() == sim.data.z_high());
  CHECK(r.data.group_of() == sim.data.group_of());
}

TEST_CASE("incomplete rows are dropped and counted") {
  TempDir dir("missing");
  std::ostringstream csv;
  csv << "school,y1,y2,y3,x,z\n";
  std::mt19937_64 rng(8);
  int expected_drop = 0;
  const char* missing[] = {"", "NA", "NaN", ".", "na"};
  for (int i = 0; i < 200; ++i) {
    std::string y2 = std::to_string(i % 2);
    std::string x = std::to_string(0.1 * (i % 7));
    if (i % 25 == 3) {
      y2 = missing[(i / 25) % 5];
      ++expected_drop;
    } else if (i % 25 == 11) {
      x = "NA";
      ++expected_drop;
    }
    csv << "s" << i / 20 << "," << (i % 3 == 0) << "," << y2 << "," << (i % 5 == 0) << "," << x << ","
        << (i / 20) * 0.5 << "\n";
  }
  write_file(dir.path / "d.csv", csv.str());
  const io::LoadResult r = io::load_data(dir.path / "d.csv", roles_xyz());
  CHECK(expected_drop == 16);  // 8% of 200 rows
  CHECK(r.n_rows_read == 200);
  CHECK(r.n_rows_dropped == expected_drop);
  CHECK(r.data.n_units() == 200 - expected_drop);
  CHECK(r.data.n_groups() == 10);
  CHECK(r.data.names().groups.front() == "s0");
}

TEST_CASE("load errors name the offending column and location") {
  TempDir dir("errors");
  write_file(dir.path / "a.csv", "school,y1,y2,y3,x,z\ns1,1,0,1,0.5,1\ns1,1,2,0,0.1,1\n");
  const std::string e1 = error_of([&] { io::load_data(dir.path / "a.csv", roles_xyz()); });
  CHECK(e1.find("'y2'") != std::string::npos);
  CHECK(e1.find("line 3") != std::string::npos);
  CHECK_THROWS_AS(io::load_data(dir.path / "a.csv", roles_xyz()), DataError);

  write_file(dir.path / "b.csv", "school,y1,y2,y3,x,z\ns1,1,0,1,0.5,1\ns1,1,1,0,0.1,2\n");
  const std::string e2 = error_of([&] { io::load_data(dir.path / "b.csv", roles_xyz()); });
  CHECK(e2.find("'z'") != std::string::npos);
  CHECK(e2.find("'s1'") != std::string::npos);

  write_file(dir.path / "c.csv", "school,y1,y2,x,z\ns1,1,0,0.5,1\n");
  const std::string e3 = error_of([&] { io::load_data(dir.path / "c.csv", roles_xyz()); });
  CHECK(e3.find("'y3'") != std::string::npos);

  io::ColumnRoles none = roles_xyz();
  none.indicators.clear();
  CHECK_THROWS_AS(none.validate(), ConfigError);
  io::ColumnRoles dup = roles_xyz();
  dup.low_covariates = {"y1"};
  CHECK_THROWS_AS(dup.validate(), ConfigError);
}

TEST_CASE("parameter snapshots round-trip exactly") {
  TempDir dir("snap");
  const SimulatedData sim = simulate(cli::default_simulation(9));
  FitConfig cfg = quick_config(2);
  cfg.n_random_starts = 2;
  const FitResult s2b = monotone(fit_step2b(sim.data, 3, 2, cfg));
  const FitResult s3 = monotone(fit_step3(sim.data, s2b, cfg));
  io::write_snapshot(dir.path / "s3", s3, sim.data.names());
  const FitResult back = io::read_snapshot(dir.path / "s3", sim.data);
  CHECK(back.beta.beta == s3.beta.beta);
  CHECK(back.structural.gamma0 == s3.structural.gamma0);
  CHECK(back.structural.gamma1 == s3.structural.gamma1);
  CHECK(back.structural.gamma2 == s3.structural.gamma2);
  CHECK(back.structural.delta0 == s3.structural.delta0);
  CHECK(back.structural.delta1 == s3.structural.delta1);
  CHECK(back.summary.loglik == doctest::Approx(s3.summary.loglik).epsilon(1e-12));

  StructuralParams rs = StructuralParams::zeros(3, 2, 1, 1, true);
  rs.random_slopes[1](0, 0) = 0.25;
  rs.random_slopes[0](1, 0) = -1.0 / 3.0;
  io::write_structural(dir.path / "rs.csv", rs, sim.data.names());
  const StructuralParams rb = io::read_structural(dir.path / "rs.csv");
  REQUIRE(rb.has_random_slopes());
  CHECK(rb.random_slopes[1](0, 0) == 0.25);
  CHECK(rb.random_slopes[0](1, 0) == -1.0 / 3.0);
}

TEST_CASE("report tables") {
  const SimulatedData sim = simulate(cli::default_simulation(4));
  FitConfig cfg = quick_config(2);
  cfg.n_random_starts = 2;
  const FitResult s2b = monotone(fit_step2b(sim.data, 3, 2, cfg));
  const io::CsvTable m = io::measurement_profile_table(s2b, sim.data.names());
  CHECK_FALSE(m.rows.empty());
  const std::string text = io::render_measurement_profile(s2b, sim.data.names());
  CHECK(text.find("y1") != std::string::npos);

  StructuralReport rep;
  rep.method = "bootstrap";
  CoefficientRow row;
  row.parameter = "gamma2";
  row.covariate = "x";
  row.low_class = 1;
  row.estimate = 0.512;
  row.se = 0.1;
  row.p = 0.0001;
  row.stars = significance_stars(row.p);
  rep.rows.push_back(row);
  CoefficientRow ne = row;
  ne.covariate = "z";
  ne.estimable = false;
  rep.rows.push_back(ne);
  const std::string out = io::render_structural_report(rep);
  CHECK(out.find("0.51***") != std::string::npos);
  CHECK(out.find("(0.10)") != std::string::npos);
  CHECK(out.find("n.e.") != std::string::npos);
}
