#include "mlca/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

namespace mlca::io {

namespace fs = std::filesystem;

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

namespace {

std::vector<std::string> split_record(const std::string& line, int line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) throw DataError("unterminated quote on line " + std::to_string(line_no));
  out.push_back(std::move(field));
  return out;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& token) {
  return token.empty() || token == "NA" || token == "NaN" || token == "nan" || token == "." ||
         token == "na";
}

std::optional<double> parse_number(const std::string& token) {
  double v = 0.0;
  const char* b = token.data();
  const char* e = b + token.size();
  if (b != e && *b == '+') ++b;
  const auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v)) return std::nullopt;
  return v;
}

double require_number(const std::string& token, const std::string& what) {
  const auto v = parse_number(trim(token));
  if (!v) {
    if (is_missing(trim(token))) return std::numeric_limits<double>::quiet_NaN();
    throw DataError("not a number in " + what + ": '" + token + "'");
  }
  return *v;
}

}  // namespace

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (!have_header) {
      if (line.empty()) continue;
      t.header = split_record(line, line_no);
      for (auto& h : t.header) h = trim(h);
      have_header = true;
      continue;
    }
    if (line.empty()) continue;
    auto rec = split_record(line, line_no);
    if (rec.size() != t.header.size()) {
      throw DataError(path.filename().string() + " line " + std::to_string(line_no) + ": expected " +
                      std::to_string(t.header.size()) + " fields, found " + std::to_string(rec.size()));
    }
    t.rows.push_back(std::move(rec));
    t.line_numbers.push_back(line_no);
  }
  if (!have_header) throw DataError(path.string() + " has no header row");
  return t;
}

std::string to_csv(const CsvTable& table) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& rec) {
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (i > 0) out += ',';
      out += quote(rec[i]);
    }
    out += '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_csv(const fs::path& path, const CsvTable& table) { write_text(path, to_csv(table)); }

std::string format_exact(double v) {
  if (std::isnan(v)) return "NA";
  if (v == 0.0) return "0";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return "NA";
  return std::string(buf, ptr);
}

std::string format_fixed(double v, int decimals) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s(buf);
  // Avoid "-0.000".
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

void ColumnRoles::validate() const {
  if (group.empty()) throw ConfigError("no group id column given");
  if (indicators.empty()) throw ConfigError("the indicator set is empty");
  if (indicators.size() < 2) throw ConfigError("at least 2 indicators are required");
  std::set<std::string> seen{group};
  auto add = [&](const std::vector<std::string>& cols, const char* role) {
    for (const auto& c : cols) {
      if (!seen.insert(c).second) {
        throw ConfigError("column '" + c + "' is used in more than one role (" + role + ")");
      }
    }
  };
  add(indicators, "indicator");
  add(low_covariates, "level-1 covariate");
  add(high_covariates, "level-2 covariate");
}

LoadResult load_data(const fs::path& path, const ColumnRoles& roles) {
  roles.validate();
  const CsvTable t = read_csv(path);
  auto locate = [&](const std::string& name) {
    const int c = t.column(name);
    if (c < 0) throw DataError("column '" + name + "' not found in " + path.filename().string());
    return c;
  };
  const int gcol = locate(roles.group);
  std::vector<int> icols, lcols, hcols;
  for (const auto& c : roles.indicators) icols.push_back(locate(c));
  for (const auto& c : roles.low_covariates) lcols.push_back(locate(c));
  for (const auto& c : roles.high_covariates) hcols.push_back(locate(c));

  LoadResult out;
  out.n_rows_read = static_cast<int>(t.rows.size());
  std::vector<std::size_t> kept;
  std::vector<std::vector<double>> values;  // indicators, low, high
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    bool complete = !is_missing(trim(row[static_cast<std::size_t>(gcol)]));
    std::vector<double> v;
    v.reserve(icols.size() + lcols.size() + hcols.size());
    for (std::size_t k = 0; complete && k < icols.size(); ++k) {
      const std::string tok = trim(row[static_cast<std::size_t>(icols[k])]);
      if (is_missing(tok)) {
        complete = false;
        break;
      }
      const auto num = parse_number(tok);
      if (!num || (*num != 0.0 && *num != 1.0)) {
        throw DataError("indicator '" + roles.indicators[k] + "' has non-binary value '" + tok +
                        "' on line " + std::to_string(t.line_numbers[r]));
      }
      v.push_back(*num);
    }
    for (const auto* cols : {&lcols, &hcols}) {
      for (std::size_t k = 0; complete && k < cols->size(); ++k) {
        const auto num = parse_number(trim(row[static_cast<std::size_t>((*cols)[k])]));
        if (!num) {
          complete = false;
          break;
        }
        v.push_back(*num);
      }
    }
    if (!complete) {
      ++out.n_rows_dropped;
      continue;
    }
    kept.push_back(r);
    values.push_back(std::move(v));
  }
  if (kept.empty()) throw DataError("no complete rows in " + path.filename().string());

  const auto n = static_cast<Eigen::Index>(kept.size());
  const auto k_n = static_cast<Eigen::Index>(icols.size());
  const auto p1 = static_cast<Eigen::Index>(lcols.size());
  const auto p2 = static_cast<Eigen::Index>(hcols.size());
  Matrix y(n, k_n), zl(n, p1);
  std::vector<int> group_of;
  std::unordered_map<std::string, int> group_index;
  ColumnNames names{roles.indicators, roles.low_covariates, roles.high_covariates, {}};
  std::vector<std::vector<double>> high_values;
  std::vector<int> high_line;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t r = kept[static_cast<std::size_t>(i)];
    const std::string gid = trim(t.rows[r][static_cast<std::size_t>(gcol)]);
    auto [it, fresh] = group_index.try_emplace(gid, static_cast<int>(names.groups.size()));
    const auto& v = values[static_cast<std::size_t>(i)];
    std::vector<double> hv(v.end() - p2, v.end());
    if (fresh) {
      names.groups.push_back(gid);
      high_values.push_back(hv);
      high_line.push_back(t.line_numbers[r]);
    } else {
      const auto& ref = high_values[static_cast<std::size_t>(it->second)];
      for (Eigen::Index q = 0; q < p2; ++q) {
        if (ref[static_cast<std::size_t>(q)] != hv[static_cast<std::size_t>(q)]) {
          throw DataError("level-2 covariate '" + roles.high_covariates[static_cast<std::size_t>(q)] +
                          "' varies within group '" + gid + "' (line " + std::to_string(t.line_numbers[r]) + ")");
        }
      }
    }
    group_of.push_back(it->second);
    for (Eigen::Index k = 0; k < k_n; ++k) y(i, k) = v[static_cast<std::size_t>(k)];
    for (Eigen::Index q = 0; q < p1; ++q) zl(i, q) = v[static_cast<std::size_t>(k_n + q)];
  }
  Matrix zh(static_cast<Eigen::Index>(high_values.size()), p2);
  for (std::size_t j = 0; j < high_values.size(); ++j)
    for (Eigen::Index q = 0; q < p2; ++q) zh(static_cast<Eigen::Index>(j), q) = high_values[j][static_cast<std::size_t>(q)];
  out.data = ResponseData(std::move(y), std::move(group_of), std::move(zl), std::move(zh), std::move(names));
  return out;
}

ColumnRoles roles_of(const ResponseData& data, const std::string& group_column) {
  const auto& n = data.names();
  ColumnRoles r{group_column, n.items, n.low_covariates, n.high_covariates};
  auto fill = [](std::vector<std::string>& v, int count, const char* prefix) {
    for (int i = static_cast<int>(v.size()); i < count; ++i) v.push_back(prefix + std::to_string(i + 1));
  };
  fill(r.indicators, data.n_items(), "y");
  fill(r.low_covariates, data.n_low_covariates(), "x");
  fill(r.high_covariates, data.n_high_covariates(), "z");
  return r;
}

void write_data(const fs::path& path, const ResponseData& data, const std::string& group_column) {
  const ColumnRoles roles = roles_of(data, group_column);
  CsvTable t;
  t.header.push_back(roles.group);
  for (const auto* v : {&roles.indicators, &roles.low_covariates, &roles.high_covariates})
    t.header.insert(t.header.end(), v->begin(), v->end());
  const auto& groups = data.names().groups;
  for (int i = 0; i < data.n_units(); ++i) {
    const int g = data.group_of()[static_cast<std::size_t>(i)];
    std::vector<std::string> row;
    row.push_back(g < static_cast<int>(groups.size()) ? groups[static_cast<std::size_t>(g)] : "g" + std::to_string(g + 1));
    for (int k = 0; k < data.n_items(); ++k) row.push_back(data.y()(i, k) == 1.0 ? "1" : "0");
    for (int q = 0; q < data.n_low_covariates(); ++q) row.push_back(format_exact(data.z_low()(i, q)));
    for (int q = 0; q < data.n_high_covariates(); ++q) row.push_back(format_exact(data.z_high()(g, q)));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {

std::string low_label(int t) { return "X" + std::to_string(t + 1); }
std::string high_label(int m) { return "W" + std::to_string(m + 1); }

int parse_label(const std::string& s, char prefix) {
  if (s.size() < 2 || s[0] != prefix) throw DataError("bad class label '" + s + "'");
  const auto v = parse_number(s.substr(1));
  if (!v || *v < 1 || *v != std::floor(*v)) throw DataError("bad class label '" + s + "'");
  return static_cast<int>(*v) - 1;
}

std::string name_or(const std::vector<std::string>& names, int i, const char* prefix) {
  return i < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(i)] : prefix + std::to_string(i + 1);
}

}  // namespace

void write_measurement(const fs::path& path, const MeasurementParams& beta,
                       const std::vector<std::string>& item_names) {
  CsvTable t;
  t.header.push_back("class");
  for (int k = 0; k < beta.n_items(); ++k) t.header.push_back(name_or(item_names, k, "y"));
  for (int c = 0; c < beta.n_classes(); ++c) {
    std::vector<std::string> row{low_label(c)};
    for (int k = 0; k < beta.n_items(); ++k) row.push_back(format_exact(beta.beta(c, k)));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

MeasurementParams read_measurement(const fs::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header[0] != "class") throw DataError(path.string() + ": expected a 'class' column first");
  MeasurementParams m{Matrix(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size() - 1))};
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (parse_label(t.rows[r][0], 'X') != static_cast<int>(r)) throw DataError(path.string() + ": classes out of order");
    for (std::size_t k = 1; k < t.header.size(); ++k)
      m.beta(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k - 1)) = require_number(t.rows[r][k], path.string());
  }
  return m;
}

void write_structural(const fs::path& path, const StructuralParams& s, const ColumnNames& names) {
  CsvTable t;
  t.header = {"parameter", "high_class", "low_class", "covariate", "value"};
  auto dim = [&](const char* what, int v) { t.rows.push_back({"dim", "", "", what, std::to_string(v)}); };
  dim("n_low", s.n_low());
  dim("n_high", s.n_high());
  dim("p_low", s.n_low_covariates());
  dim("p_high", static_cast<int>(s.gamma1.cols()));
  dim("random_slopes", s.has_random_slopes() ? 1 : 0);
  const int t_n = s.n_low();
  const int m_n = s.n_high();
  for (int m = 0; m < m_n; ++m)
    for (int c = 1; c < t_n; ++c)
      t.rows.push_back({"gamma0", high_label(m), low_label(c), "", format_exact(s.gamma0(m, c - 1))});
  for (int c = 1; c < t_n; ++c)
    for (int q = 0; q < s.gamma1.cols(); ++q)
      t.rows.push_back({"gamma1", "", low_label(c), name_or(names.high_covariates, q, "z"), format_exact(s.gamma1(c - 1, q))});
  if (s.has_random_slopes()) {
    for (int m = 0; m < m_n; ++m)
      for (int c = 1; c < t_n; ++c)
        for (int q = 0; q < s.n_low_covariates(); ++q)
          t.rows.push_back({"gamma2", high_label(m), low_label(c), name_or(names.low_covariates, q, "x"),
                            format_exact(s.random_slopes[static_cast<std::size_t>(m)](c - 1, q))});
  } else {
    for (int c = 1; c < t_n; ++c)
      for (int q = 0; q < s.gamma2.cols(); ++q)
        t.rows.push_back({"gamma2", "", low_label(c), name_or(names.low_covariates, q, "x"), format_exact(s.gamma2(c - 1, q))});
  }
  for (int m = 1; m < m_n; ++m) t.rows.push_back({"delta0", high_label(m), "", "", format_exact(s.delta0(m - 1))});
  for (int m = 1; m < m_n; ++m)
    for (int q = 0; q < s.delta1.cols(); ++q)
      t.rows.push_back({"delta1", high_label(m), "", name_or(names.high_covariates, q, "z"), format_exact(s.delta1(m - 1, q))});
  write_csv(path, t);
}

StructuralParams read_structural(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::vector<std::string> expected{"parameter", "high_class", "low_class", "covariate", "value"};
  if (t.header != expected) throw DataError(path.string() + ": unexpected header");
  std::map<std::string, int> dims;
  for (const auto& r : t.rows)
    if (r[0] == "dim") dims[r[3]] = static_cast<int>(require_number(r[4], path.string()));
  for (const char* d : {"n_low", "n_high", "p_low", "p_high", "random_slopes"})
    if (!dims.count(d)) throw DataError(path.string() + ": missing dimension '" + d + "'");
  const bool rs = dims["random_slopes"] != 0;
  StructuralParams s = StructuralParams::zeros(dims["n_low"], dims["n_high"], dims["p_low"], dims["p_high"], rs);
  std::map<std::string, int> col_low, col_high;
  for (const auto& r : t.rows) {
    const std::string& p = r[0];
    if (p == "dim") continue;
    const double v = require_number(r[4], path.string());
    if (p == "gamma0") {
      s.gamma0(parse_label(r[1], 'W'), parse_label(r[2], 'X') - 1) = v;
    } else if (p == "delta0") {
      s.delta0(parse_label(r[1], 'W') - 1) = v;
    } else {
      const bool low = p == "gamma2";
      auto& cols = low ? col_low : col_high;
      const int q = cols.try_emplace(r[3], static_cast<int>(cols.size())).first->second;
      if (p == "gamma1") {
        s.gamma1(parse_label(r[2], 'X') - 1, q) = v;
      } else if (p == "gamma2") {
        if (rs) {
          s.random_slopes.at(static_cast<std::size_t>(parse_label(r[1], 'W')))(parse_label(r[2], 'X') - 1, q) = v;
        } else {
          s.gamma2(parse_label(r[2], 'X') - 1, q) = v;
        }
      } else if (p == "delta1") {
        s.delta1(parse_label(r[1], 'W') - 1, q) = v;
      } else {
        throw DataError(path.string() + ": unknown parameter '" + p + "'");
      }
    }
  }
  return s;
}

void write_snapshot(const fs::path& dir, const FitResult& fit, const ColumnNames& names) {
  write_measurement(dir / "measurement.csv", fit.beta, names.items);
  write_structural(dir / "structural.csv", fit.structural, names);
  const FitSummary& s = fit.summary;
  CsvTable t;
  t.header = {"key", "value"};
  t.rows = {{"loglik", format_exact(s.loglik)},
            {"npar", std::to_string(s.npar)},
            {"bic", format_exact(s.bic)},
            {"bic_group", format_exact(s.bic_group)},
            {"tic", s.tic ? format_exact(*s.tic) : "NA"},
            {"entropy_r2_low", format_exact(s.entropy_r2_low)},
            {"entropy_r2_high", s.entropy_r2_high ? format_exact(*s.entropy_r2_high) : "NA"},
            {"iterations", std::to_string(s.n_iterations)},
            {"converged", s.converged ? "1" : "0"},
            {"best_start", std::to_string(s.best_start_index)},
            {"boundary", s.boundary ? "1" : "0"},
            {"degenerate_class", s.degenerate_class ? "1" : "0"},
            {"sparse_support", s.sparse_support ? "1" : "0"}};
  write_csv(dir / "summary.csv", t);
}

FitResult read_snapshot(const fs::path& dir, const ResponseData& data) {
  FitResult f;
  f.beta = read_measurement(dir / "measurement.csv");
  f.structural = read_structural(dir / "structural.csv");
  check_dimensions(data, f.beta, f.structural);
  f.posteriors = posterior_tables(data, f.beta, f.structural);
  const CsvTable t = read_csv(dir / "summary.csv");
  std::map<std::string, std::string> kv;
  for (const auto& r : t.rows) kv[r.at(0)] = r.at(1);
  auto num = [&](const char* k) { return require_number(kv[k], (dir / "summary.csv").string()); };
  FitSummary& s = f.summary;
  s.loglik = total_loglik(data, f.beta, f.structural);
  s.npar = static_cast<int>(num("npar"));
  s.bic = bic(s.loglik, s.npar, data.n_units());
  s.bic_group = bic(s.loglik, s.npar, data.n_groups());
  if (!std::isnan(num("tic"))) s.tic = num("tic");
  s.entropy_r2_low = entropy_r2(f.posteriors, Level::low);
  s.entropy_r2_high = entropy_r2(f.posteriors, Level::high);
  s.n_iterations = static_cast<int>(num("iterations"));
  s.converged = num("converged") != 0.0;
  s.best_start_index = static_cast<int>(num("best_start"));
  s.boundary = num("boundary") != 0.0;
  s.degenerate_class = num("degenerate_class") != 0.0;
  s.sparse_support = num("sparse_support") != 0.0;
  return f;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string opt(const std::optional<double>& v, int decimals) {
  return v ? format_fixed(*v, decimals) : "NA";
}

// Columns padded to their widest cell; the first column is left-aligned.
std::string align(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& r : cells) {
    if (width.size() < r.size()) width.resize(r.size(), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream out;
  for (const auto& r : cells) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      const std::size_t pad = width[c] - r[c].size();
      if (c == 0) {
        line += r[c] + std::string(pad, ' ');
      } else {
        line += "  " + std::string(pad, ' ') + r[c];
      }
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  }
  return out.str();
}

Vector low_shares(const PosteriorTables& p) {
  return p.low_marginal.colwise().mean().transpose();
}

// P(X = t | W = m) from the joint posteriors, and P(W = m).
std::pair<Matrix, Vector> conditional_shares(const FitResult& fit) {
  const auto& p = fit.posteriors;
  const int t_n = p.n_low, m_n = p.n_high;
  Matrix cond = Matrix::Zero(m_n, t_n);
  const Vector col_sums = p.joint.colwise().sum().transpose();
  for (int m = 0; m < m_n; ++m)
    for (int t = 0; t < t_n; ++t) cond(m, t) = col_sums(t + t_n * m);
  for (int m = 0; m < m_n; ++m) {
    const double s = cond.row(m).sum();
    if (s > 0) cond.row(m) /= s;
  }
  const Vector w = p.high.colwise().mean().transpose();
  return {cond, w};
}

}  // namespace

CsvTable criterion_table(const CriterionReport& report) {
  CsvTable t;
  t.header = {"n_low", "n_high", "loglik", "npar", "bic", "bic_group", "aic", "tic",
              "entropy_r2_low", "entropy_r2_high", "converged", "selected", "near_tie", "error"};
  for (const auto& r : report.rows) {
    const bool ok = r.error.empty();
    t.rows.push_back({std::to_string(r.n_low), std::to_string(r.n_high), ok ? format_fixed(r.loglik, 4) : "NA",
                      ok ? std::to_string(r.npar) : "NA", ok ? format_fixed(r.bic, 4) : "NA",
                      ok ? format_fixed(r.bic_group, 4) : "NA", ok ? format_fixed(r.aic, 4) : "NA",
                      ok ? opt(r.tic, 4) : "NA", ok ? format_fixed(r.entropy_r2_low, 4) : "NA",
                      ok ? opt(r.entropy_r2_high, 4) : "NA", r.converged ? "1" : "0", r.selected ? "1" : "0",
                      r.near_tie ? "1" : "0", r.error});
  }
  return t;
}

std::string render_criterion_report(const CriterionReport& report) {
  std::vector<std::vector<std::string>> cells;
  const bool high = report.scanned == "M";
  cells.push_back({report.scanned, "LL", "Npar", "BIC", high ? "BIC(J)" : "AIC", high ? "TIC" : "R2 entr.", ""});
  for (const auto& r : report.rows) {
    const std::string k = std::to_string(high ? r.n_high : r.n_low);
    if (!r.error.empty()) {
      cells.push_back({k, "failed", "", "", "", "", ""});
      continue;
    }
    std::string mark = r.selected ? "<- selected" : (r.near_tie ? "near tie" : "");
    if (!r.converged) mark += mark.empty() ? "not converged" : ", not converged";
    cells.push_back({k, format_fixed(r.loglik, 4), std::to_string(r.npar), format_fixed(r.bic, 4),
                     high ? format_fixed(r.bic_group, 4) : format_fixed(r.aic, 4),
                     high ? opt(r.tic, 4) : format_fixed(r.entropy_r2_low, 4), mark});
  }
  return report.title + "\nCriterion: " + report.criterion + "\n\n" + align(cells);
}

CsvTable measurement_profile_table(const FitResult& fit, const ColumnNames& names) {
  const int t_n = fit.beta.n_classes();
  CsvTable t;
  t.header = {"section", "label", "weight"};
  for (int c = 0; c < t_n; ++c) t.header.push_back(low_label(c));
  const Vector share = low_shares(fit.posteriors);
  std::vector<std::string> size_row{"class_size", "P(X)", "1"};
  for (int c = 0; c < t_n; ++c) size_row.push_back(format_fixed(share(c), 4));
  t.rows.push_back(size_row);
  const Matrix prob = fit.beta.probabilities();
  for (int k = 0; k < fit.beta.n_items(); ++k) {
    std::vector<std::string> row{"item", name_or(names.items, k, "y"), "NA"};
    for (int c = 0; c < t_n; ++c) row.push_back(format_fixed(prob(c, k), 4));
    t.rows.push_back(row);
  }
  const auto [cond, w] = conditional_shares(fit);
  for (int m = 0; m < cond.rows(); ++m) {
    std::vector<std::string> row{"high_class", high_label(static_cast<int>(m)), format_fixed(w(m), 4)};
    for (int c = 0; c < t_n; ++c) row.push_back(format_fixed(cond(m, c), 4));
    t.rows.push_back(row);
  }
  return t;
}

std::string render_measurement_profile(const FitResult& fit, const ColumnNames& names) {
  const int t_n = fit.beta.n_classes();
  const Vector share = low_shares(fit.posteriors);
  const Matrix prob = fit.beta.probabilities();
  std::vector<std::vector<std::string>> a;
  std::vector<std::string> head{""};
  for (int c = 0; c < t_n; ++c) head.push_back(low_label(c));
  a.push_back(head);
  std::vector<std::string> sz{"Class size"};
  for (int c = 0; c < t_n; ++c) sz.push_back(format_fixed(share(c), 2));
  a.push_back(sz);
  for (int k = 0; k < fit.beta.n_items(); ++k) {
    std::vector<std::string> row{name_or(names.items, k, "y")};
    for (int c = 0; c < t_n; ++c) row.push_back(format_fixed(prob(c, k), 2));
    a.push_back(row);
  }
  const auto [cond, w] = conditional_shares(fit);
  std::vector<std::vector<std::string>> b;
  std::vector<std::string> hb{"", "P(W)"};
  for (int c = 0; c < t_n; ++c) hb.push_back("P(" + low_label(c) + "|W)");
  b.push_back(hb);
  for (int m = 0; m < cond.rows(); ++m) {
    std::vector<std::string> row{high_label(static_cast<int>(m)), format_fixed(w(m), 2)};
    for (int c = 0; c < t_n; ++c) row.push_back(format_fixed(cond(m, c), 2));
    b.push_back(row);
  }
  return "Low-level classes: class sizes and P(item = 1 | X)\n\n" + align(a) +
         "\nHigh-level classes: sizes and class distribution P(X | W)\n\n" + align(b);
}

CsvTable class_profile_table(const FitResult& fit, const ColumnNames& names) {
  CsvTable t;
  t.header = {"kind", "high_class", "low_class", "item", "value"};
  const Matrix prob = fit.beta.probabilities();
  for (int c = 0; c < fit.beta.n_classes(); ++c)
    for (int k = 0; k < fit.beta.n_items(); ++k)
      t.rows.push_back({"item_probability", "", low_label(c), name_or(names.items, k, "y"), format_fixed(prob(c, k), 6)});
  const auto [cond, w] = conditional_shares(fit);
  for (int m = 0; m < cond.rows(); ++m) {
    t.rows.push_back({"high_class_share", high_label(static_cast<int>(m)), "", "", format_fixed(w(m), 6)});
    for (int c = 0; c < cond.cols(); ++c)
      t.rows.push_back({"low_given_high", high_label(static_cast<int>(m)), low_label(static_cast<int>(c)), "",
                        format_fixed(cond(m, c), 6)});
  }
  return t;
}

CsvTable structural_report_table(const StructuralReport& report) {
  CsvTable t;
  t.header = {"method", "block", "parameter", "high_class", "low_class", "covariate",
              "estimate", "se", "z", "p", "stars", "estimable"};
  for (const auto& r : report.rows) {
    const bool high = r.block == CoefficientBlock::high;
    t.rows.push_back({report.method, high ? "high" : "low", r.parameter,
                      high ? high_label(r.low_class) : (r.high_class >= 0 ? high_label(r.high_class) : ""),
                      high ? "" : low_label(r.low_class), r.covariate, format_fixed(r.estimate, 6),
                      format_fixed(r.se, 6), format_fixed(r.z, 4), format_fixed(r.p, 6), r.stars,
                      r.estimable ? "1" : "0"});
  }
  return t;
}

std::string render_structural_report(const StructuralReport& report) {
  std::ostringstream out;
  out << "Structural model (" << report.method << " standard errors in parentheses)\n";
  if (report.method == "bootstrap") {
    out << "Replicates: " << report.n_replicates << ", dropped: " << report.n_dropped
        << (report.unreliable ? " (more than 10% dropped: unreliable)" : "") << '\n';
  }
  if (report.boundary) out << "Some estimates lie on the logit bound.\n";
  out << "*** p<0.01, ** p<0.05, * p<0.1\n";
  for (const auto block : {CoefficientBlock::high, CoefficientBlock::low}) {
    // Columns are the outcome classes (and group classes for random slopes).
    std::vector<std::string> cols;
    std::vector<std::string> covs;
    for (const auto& r : report.rows) {
      if (r.block != block) continue;
      const std::string c = block == CoefficientBlock::high
                                ? high_label(r.low_class)
                                : (r.high_class >= 0 ? high_label(r.high_class) + ":" : "") + low_label(r.low_class);
      if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
      if (std::find(covs.begin(), covs.end(), r.covariate) == covs.end()) covs.push_back(r.covariate);
    }
    if (cols.empty()) continue;
    out << '\n' << (block == CoefficientBlock::high ? "High level (group classes)" : "Low level (unit classes)") << "\n\n";
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> head{""};
    head.insert(head.end(), cols.begin(), cols.end());
    cells.push_back(head);
    for (const auto& cov : covs) {
      std::vector<std::string> est{cov}, se{""};
      for (const auto& c : cols) {
        std::string e = "", s = "";
        for (const auto& r : report.rows) {
          if (r.block != block || r.covariate != cov) continue;
          const std::string rc = block == CoefficientBlock::high
                                     ? high_label(r.low_class)
                                     : (r.high_class >= 0 ? high_label(r.high_class) + ":" : "") + low_label(r.low_class);
          if (rc != c) continue;
          if (r.estimable) {
            e = format_fixed(r.estimate, 2) + r.stars;
            s = "(" + format_fixed(r.se, 2) + ")";
          } else {
            e = "n.e.";
          }
        }
        est.push_back(e);
        se.push_back(s);
      }
      cells.push_back(est);
      cells.push_back(se);
    }
    out << align(cells);
  }
  return out.str();
}

}  // namespace mlca::io
