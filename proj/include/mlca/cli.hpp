#pragma once

// Command-line front end: configuration, pipeline orchestration and artifact
// emission. `run` is the whole program minus process setup, so it can be
// driven from tests.

#include "mlca/datagen.hpp"
#include "mlca/inference.hpp"
#include "mlca/io.hpp"
#include "mlca/selection.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace mlca::cli {

inline constexpr const char* kVersion = "1.0.0";

struct RunConfig {
  std::string input;
  io::ColumnRoles roles;
  SelectionPlan plan;
  FitConfig fit;
  Step3Options step3;
  BootstrapConfig bootstrap;
  bool naive = true;
  std::string output = "mlca_out";
  std::optional<GenerativeSpec> simulation;  // used by `simulate`

  void validate() const;
};

/// Parses a run configuration, or the "config" member of a run manifest.
/// Unknown keys and malformed values raise ConfigError.
RunConfig read_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& json_text);
/// Canonical JSON form; parse_run_config(run_config_json(c)) reproduces c.
std::string run_config_json(const RunConfig& config);

/// Default simulation: three unit classes, two group classes, 200 groups of
/// 50, eight items, one level-1 and one level-2 covariate.
GenerativeSpec default_simulation(std::uint64_t seed);

/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 estimation
/// failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mlca::cli
