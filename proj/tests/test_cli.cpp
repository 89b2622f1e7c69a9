#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mlca/cli.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

using namespace mlca;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mlca_test_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Run {
  int code;
  std::string out, err;
};

Run mlca_run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"mlca"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kSmall = R"({
  "selection": {"t_max": 2, "m_max": 2, "criterion_high": "bic-group"},
  "fit": {"random_starts": 2, "seed": 5},
  "bootstrap": {"replicates": 5, "seed": 6},
  "simulate": {
    "n_groups": 30, "group_size": 15, "seed": 7,
    "beta": [[2.5, 2.5, 2.5, 2.5, 2.5], [-2.5, -2.5, -2.5, -2.5, -2.5]],
    "gamma0": [[-1.0], [1.0]],
    "gamma2": [[0.5]], "gamma1": [[0.3]], "delta1": [[0.4]],
    "low_covariates": [{"name": "x"}], "high_covariates": [{"name": "z"}]
  }
})";

}  // namespace

TEST_CASE("version and usage errors") {
  const Run v = mlca_run({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.find(cli::kVersion) != std::string::npos);
  CHECK(mlca_run({}).code == 2);
  CHECK(mlca_run({"frobnicate"}).code == 2);
  CHECK(mlca_run({"select", "--criterion-high", "nope"}).code == 2);
}

TEST_CASE("configuration errors exit with 2") {
  TempDir dir("config");
  write_file(dir.path / "unknown.json", R"({"fit": {"random_starts": 2, "bogus": 1}})");
  const Run a = mlca_run({"select", "--config", (dir.path / "unknown.json").string()});
  CHECK(a.code == 2);
  CHECK(a.err.find("bogus") != std::string::npos);

  write_file(dir.path / "d.csv", "g,y1,y2\na,1,0\n");
  write_file(dir.path / "noind.json", R"({"input": "d.csv", "roles": {"group": "g", "indicators": []}})");
  CHECK(mlca_run({"load-check", "--config", (dir.path / "noind.json").string()}).code == 2);

  CHECK_THROWS_AS(cli::parse_run_config("{not json"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config(R"({"selection": {"t_max": "three"}})"), ConfigError);
}

TEST_CASE("data errors exit with 3") {
  TempDir dir("data");
  write_file(dir.path / "d.csv", "g,y1,y2,y3\na,1,0,1\na,1,7,0\n");
  write_file(dir.path / "c.json", R"({"input": "d.csv", "roles": {"group": "g", "indicators": ["y1", "y2", "y3"]}})");
  const Run r = mlca_run({"load-check", "--config", (dir.path / "c.json").string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("y2") != std::string::npos);
}

TEST_CASE("configuration JSON round-trips") {
  const cli::RunConfig c = cli::parse_run_config(kSmall);
  const cli::RunConfig back = cli::parse_run_config(cli::run_config_json(c));
  CHECK(cli::run_config_json(back) == cli::run_config_json(c));
  CHECK(back.plan.t_max == 2);
  CHECK(back.fit.n_random_starts == 2);
  REQUIRE(back.simulation.has_value());
  CHECK(back.simulation->n_groups == 30);
}

TEST_CASE("simulate then pipeline writes every artifact, identically twice") {
  TempDir dir("pipeline");
  write_file(dir.path / "base.json", kSmall);
  std::map<std::string, std::string> first;
  for (int round = 0; round < 2; ++round) {
    const fs::path work = dir.path / "work";
    fs::remove_all(work);
    REQUIRE(mlca_run({"simulate", "--config", (dir.path / "base.json").string(), "--out", work.string()}).code == 0);
    const Run p = mlca_run({"pipeline", "--config", (work / "config.json").string()});
    REQUIRE_MESSAGE(p.code == 0, p.err);
    const fs::path res = work / "results";
    for (const char* f : {"run_manifest.json", "step1_selection.csv", "step2a_selection.csv", "step2b_selection.csv",
                          "step2b/measurement.csv", "step3/structural.csv", "structural_report.csv",
                          "structural_report.txt", "naive_report.csv", "measurement_profile.csv",
                          "class_profile.csv"}) {
      CHECK_MESSAGE(fs::exists(res / f), f);
    }
    const auto manifest = nlohmann::json::parse(slurp(res / "run_manifest.json"));
    CHECK(manifest["status"] == "ok");
    CHECK(manifest["results"]["selection"].contains("n_low"));
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(work))
      if (e.is_regular_file()) files[fs::relative(e.path(), work).generic_string()] = slurp(e.path());
    if (round == 0) {
      first = files;
    } else {
      CHECK(files.size() == first.size());
      for (const auto& [name, bytes] : first) CHECK_MESSAGE(files[name] == bytes, name);
    }
  }

  // A later stage run on its own reads the earlier snapshots.
  const fs::path work = dir.path / "work";
  const Run n = mlca_run({"naive", "--config", (work / "config.json").string()});
  CHECK(n.code == 0);
  CHECK(fs::exists(work / "results" / "naive_manifest.json"));
  const Run missing = mlca_run({"naive", "--config", (work / "config.json").string(), "--out", (work / "empty").string()});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("step1") != std::string::npos);
}
