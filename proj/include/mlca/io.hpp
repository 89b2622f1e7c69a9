#pragma once

// CSV ingestion, parameter snapshots and report writers. Every file written
// here can be read back by the matching reader.

#include "mlca/inference.hpp"
#include "mlca/selection.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mlca::io {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;  // file line of each row (header is line 1)

  /// Index of a header column; -1 when absent.
  int column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
std::string to_csv(const CsvTable& table);

/// Shortest decimal form that parses back to the same double; "NA" for NaN.
std::string format_exact(double v);
/// Fixed-point with the given number of decimals; "NA" for NaN.
std::string format_fixed(double v, int decimals);

struct ColumnRoles {
  std::string group;
  std::vector<std::string> indicators;
  std::vector<std::string> low_covariates;
  std::vector<std::string> high_covariates;

  /// Throws ConfigError: no group, fewer than 2 indicators, or a column in
  /// two roles.
  void validate() const;
};

struct LoadResult {
  ResponseData data;
  int n_rows_read = 0;
  int n_rows_dropped = 0;  // incomplete rows removed
};

/// Complete-case load. Rows with an empty, "NA", "NaN" or "." token, or a
/// non-numeric covariate, in any role column are dropped. Numeric indicator
/// values other than 0/1, and level-2 covariates that vary within a group,
/// raise DataError naming the column and the row or group.
LoadResult load_data(const std::filesystem::path& path, const ColumnRoles& roles);

/// Writes the data in the layout load_data reads (group, indicators,
/// level-1 covariates, level-2 covariates).
void write_data(const std::filesystem::path& path, const ResponseData& data,
                const std::string& group_column = "group");

ColumnRoles roles_of(const ResponseData& data, const std::string& group_column = "group");

// Parameter snapshots ---------------------------------------------------------

void write_measurement(const std::filesystem::path& path, const MeasurementParams& beta,
                       const std::vector<std::string>& item_names);
MeasurementParams read_measurement(const std::filesystem::path& path);

void write_structural(const std::filesystem::path& path, const StructuralParams& s,
                      const ColumnNames& names);
StructuralParams read_structural(const std::filesystem::path& path);

/// measurement.csv, structural.csv and summary.csv under `dir`.
void write_snapshot(const std::filesystem::path& dir, const FitResult& fit, const ColumnNames& names);
/// Reloads a snapshot and recomputes posteriors and summary on `data`.
FitResult read_snapshot(const std::filesystem::path& dir, const ResponseData& data);

// Reports ---------------------------------------------------------------------

CsvTable criterion_table(const CriterionReport& report);
std::string render_criterion_report(const CriterionReport& report);

/// Item response probabilities per low class, the low-class sizes, and
/// P(X | W) with the group-class sizes.
CsvTable measurement_profile_table(const FitResult& fit, const ColumnNames& names);
std::string render_measurement_profile(const FitResult& fit, const ColumnNames& names);

/// Long-form class profile for plotting: item probabilities per low class and
/// the low-class distribution within each group class.
CsvTable class_profile_table(const FitResult& fit, const ColumnNames& names);

CsvTable structural_report_table(const StructuralReport& report);
std::string render_structural_report(const StructuralReport& report);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mlca::io
