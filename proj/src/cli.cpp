#include "mlca/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <fstream>
#include <map>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

namespace mlca::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// JSON helpers

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

std::vector<std::string> strings_of(const json& obj, const char* key, const std::string& where) {
  return get_or<std::vector<std::string>>(obj, key, {}, where);
}

Matrix matrix_of(const json& v, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != rows) {
    throw ConfigError(what + " must have " + std::to_string(rows) + " rows");
  }
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = v[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(what + " must have " + std::to_string(cols) + " columns");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!row[static_cast<std::size_t>(c)].is_number()) throw ConfigError(what + " must be numeric");
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

json json_of(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json json_of(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

template <typename E>
E enum_of(const std::string& s, const std::vector<std::pair<std::string, E>>& table, const std::string& what) {
  for (const auto& [name, value] : table)
    if (name == s) return value;
  std::string allowed;
  for (const auto& [name, value] : table) allowed += (allowed.empty() ? "" : ", ") + name;
  throw ConfigError("bad " + what + " '" + s + "' (expected " + allowed + ")");
}

template <typename E>
std::string name_of(E value, const std::vector<std::pair<std::string, E>>& table) {
  for (const auto& [name, v] : table)
    if (v == value) return name;
  return table.front().first;
}

const std::vector<std::pair<std::string, LowCriterion>> kLowCriteria{{"bic", LowCriterion::bic},
                                                                     {"aic", LowCriterion::aic}};
const std::vector<std::pair<std::string, HighCriterion>> kHighCriteria{
    {"tic", HighCriterion::tic}, {"bic-group", HighCriterion::bic_group}, {"bic", HighCriterion::bic}};
const std::vector<std::pair<std::string, Step2bVariant>> kVariants{
    {"full", Step2bVariant::full}, {"fix-w", Step2bVariant::fix_w_regressions}};
const std::vector<std::pair<std::string, ResampleUnit>> kResample{
    {"groups", ResampleUnit::groups},
    {"units-within-groups", ResampleUnit::units_within_groups},
    {"two-stage", ResampleUnit::two_stage}};
const std::vector<std::pair<std::string, CovariateKind>> kKinds{{"normal", CovariateKind::standard_normal},
                                                                {"bernoulli", CovariateKind::bernoulli}};

GenerativeSpec parse_simulation(const json& j) {
  const std::string where = "simulate";
  reject_unknown(j, {"n_groups", "group_size", "group_sizes", "beta", "gamma0", "gamma1", "gamma2",
                     "random_slopes", "delta0", "delta1", "low_covariates", "high_covariates", "seed"},
                 where);
  GenerativeSpec g;
  g.n_groups = get_or<int>(j, "n_groups", 0, where);
  g.group_size = get_or<int>(j, "group_size", 0, where);
  g.group_sizes = get_or<std::vector<int>>(j, "group_sizes", {}, where);
  g.seed = get_or<std::uint64_t>(j, "seed", 1, where);
  if (!j.contains("beta") || !j["beta"].is_array() || j["beta"].empty() || !j["beta"][0].is_array()) {
    throw ConfigError("simulate.beta must be a non-empty T x K array");
  }
  const auto t = static_cast<Eigen::Index>(j["beta"].size());
  const auto k = static_cast<Eigen::Index>(j["beta"][0].size());
  g.beta.beta = matrix_of(j["beta"], t, k, "simulate.beta");
  auto covs = [&](const char* key) {
    std::vector<CovariateSpec> out;
    if (!j.contains(key)) return out;
    if (!j[key].is_array()) throw ConfigError(std::string("simulate.") + key + " must be an array");
    for (const auto& c : j[key]) {
      reject_unknown(c, {"name", "kind"}, std::string("simulate.") + key);
      out.push_back({get_or<std::string>(c, "name", "", where),
                     enum_of(get_or<std::string>(c, "kind", "normal", where), kKinds, "covariate kind")});
    }
    return out;
  };
  g.low_covariates = covs("low_covariates");
  g.high_covariates = covs("high_covariates");
  const auto p1 = static_cast<Eigen::Index>(g.low_covariates.size());
  const auto p2 = static_cast<Eigen::Index>(g.high_covariates.size());
  Eigen::Index m = 1;
  if (j.contains("gamma0")) m = static_cast<Eigen::Index>(j["gamma0"].size());
  else if (j.contains("delta0")) m = static_cast<Eigen::Index>(j["delta0"].size()) + 1;
  const bool rs = j.contains("random_slopes");
  g.structural = StructuralParams::zeros(static_cast<int>(t), static_cast<int>(m), static_cast<int>(p1),
                                         static_cast<int>(p2), rs);
  if (j.contains("gamma0")) g.structural.gamma0 = matrix_of(j["gamma0"], m, t - 1, "simulate.gamma0");
  if (j.contains("gamma1")) g.structural.gamma1 = matrix_of(j["gamma1"], t - 1, p2, "simulate.gamma1");
  if (j.contains("gamma2")) g.structural.gamma2 = matrix_of(j["gamma2"], t - 1, p1, "simulate.gamma2");
  if (rs) {
    if (!j["random_slopes"].is_array() || static_cast<Eigen::Index>(j["random_slopes"].size()) != m) {
      throw ConfigError("simulate.random_slopes needs one (T-1) x P1 block per group class");
    }
    for (Eigen::Index w = 0; w < m; ++w)
      g.structural.random_slopes[static_cast<std::size_t>(w)] =
          matrix_of(j["random_slopes"][static_cast<std::size_t>(w)], t - 1, p1, "simulate.random_slopes");
  }
  if (j.contains("delta0")) {
    const Matrix d = matrix_of(json::array({j["delta0"]}), 1, m - 1, "simulate.delta0");
    g.structural.delta0 = d.row(0).transpose();
  }
  if (j.contains("delta1")) g.structural.delta1 = matrix_of(j["delta1"], m - 1, p2, "simulate.delta1");
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("simulate: ") + e.what());
  }
  return g;
}

json simulation_json(const GenerativeSpec& g) {
  json j;
  j["n_groups"] = g.n_groups;
  j["group_size"] = g.group_size;
  if (!g.group_sizes.empty()) j["group_sizes"] = g.group_sizes;
  j["seed"] = g.seed;
  j["beta"] = json_of(g.beta.beta);
  const auto& s = g.structural;
  j["gamma0"] = json_of(s.gamma0);
  j["gamma1"] = json_of(s.gamma1);
  if (s.has_random_slopes()) {
    json rs = json::array();
    for (const auto& b : s.random_slopes) rs.push_back(json_of(b));
    j["random_slopes"] = rs;
  } else {
    j["gamma2"] = json_of(s.gamma2);
  }
  j["delta0"] = json_of(s.delta0);
  j["delta1"] = json_of(s.delta1);
  auto covs = [](const std::vector<CovariateSpec>& v) {
    json a = json::array();
    for (const auto& c : v) a.push_back({{"name", c.name}, {"kind", name_of(c.kind, kKinds)}});
    return a;
  };
  j["low_covariates"] = covs(g.low_covariates);
  j["high_covariates"] = covs(g.high_covariates);
  return j;
}

RunConfig parse_config_json(const json& root_in) {
  const json& root = root_in.contains("config") && root_in.contains("tool") ? root_in["config"] : root_in;
  reject_unknown(root, {"input", "roles", "selection", "fit", "step3", "bootstrap", "naive", "output", "simulate"},
                 "configuration");
  RunConfig c;
  c.input = get_or<std::string>(root, "input", "", "configuration");
  c.output = get_or<std::string>(root, "output", c.output, "configuration");
  c.naive = get_or<bool>(root, "naive", c.naive, "configuration");
  if (root.contains("roles")) {
    const json& r = root["roles"];
    reject_unknown(r, {"group", "indicators", "low_covariates", "high_covariates"}, "roles");
    c.roles.group = get_or<std::string>(r, "group", "", "roles");
    c.roles.indicators = strings_of(r, "indicators", "roles");
    c.roles.low_covariates = strings_of(r, "low_covariates", "roles");
    c.roles.high_covariates = strings_of(r, "high_covariates", "roles");
  }
  if (root.contains("selection")) {
    const json& s = root["selection"];
    reject_unknown(s, {"t_max", "m_max", "criterion_low", "criterion_high", "variant", "near_tie_threshold"},
                   "selection");
    c.plan.t_max = get_or<int>(s, "t_max", c.plan.t_max, "selection");
    c.plan.m_max = get_or<int>(s, "m_max", c.plan.m_max, "selection");
    c.plan.criterion_low = enum_of(get_or<std::string>(s, "criterion_low", "bic", "selection"), kLowCriteria, "criterion_low");
    c.plan.criterion_high = enum_of(get_or<std::string>(s, "criterion_high", "tic", "selection"), kHighCriteria, "criterion_high");
    c.plan.step2b_variant = enum_of(get_or<std::string>(s, "variant", "full", "selection"), kVariants, "variant");
    c.plan.near_tie_threshold = get_or<double>(s, "near_tie_threshold", c.plan.near_tie_threshold, "selection");
  }
  if (root.contains("fit")) {
    const json& f = root["fit"];
    reject_unknown(f, {"max_iterations", "tolerance", "relative_tolerance", "random_starts", "seed",
                       "newton_tolerance", "newton_max_iterations", "threads"},
                   "fit");
    c.fit.max_iterations = get_or<int>(f, "max_iterations", c.fit.max_iterations, "fit");
    c.fit.loglik_tolerance = get_or<double>(f, "tolerance", c.fit.loglik_tolerance, "fit");
    c.fit.relative_tolerance = get_or<bool>(f, "relative_tolerance", c.fit.relative_tolerance, "fit");
    c.fit.n_random_starts = get_or<int>(f, "random_starts", c.fit.n_random_starts, "fit");
    c.fit.seed = get_or<std::uint64_t>(f, "seed", c.fit.seed, "fit");
    c.fit.m_step_newton_tolerance = get_or<double>(f, "newton_tolerance", c.fit.m_step_newton_tolerance, "fit");
    c.fit.m_step_max_newton = get_or<int>(f, "newton_max_iterations", c.fit.m_step_max_newton, "fit");
    c.fit.n_threads = get_or<int>(f, "threads", c.fit.n_threads, "fit");
  }
  if (root.contains("step3")) {
    const json& s = root["step3"];
    reject_unknown(s, {"split", "random_slopes"}, "step3");
    c.step3.split = get_or<bool>(s, "split", false, "step3");
    c.step3.random_slopes = get_or<bool>(s, "random_slopes", false, "step3");
  }
  if (root.contains("bootstrap")) {
    const json& b = root["bootstrap"];
    reject_unknown(b, {"replicates", "resample", "seed", "threads", "replicate_random_starts"}, "bootstrap");
    c.bootstrap.n_replicates = get_or<int>(b, "replicates", c.bootstrap.n_replicates, "bootstrap");
    c.bootstrap.resample_unit = enum_of(get_or<std::string>(b, "resample", "groups", "bootstrap"), kResample, "resample");
    c.bootstrap.seed = get_or<std::uint64_t>(b, "seed", c.bootstrap.seed, "bootstrap");
    c.bootstrap.n_threads = get_or<int>(b, "threads", c.bootstrap.n_threads, "bootstrap");
    c.bootstrap.replicate_random_starts =
        get_or<int>(b, "replicate_random_starts", c.bootstrap.replicate_random_starts, "bootstrap");
  }
  if (root.contains("simulate")) c.simulation = parse_simulation(root["simulate"]);
  return c;
}

json config_json(const RunConfig& c) {
  json j;
  j["input"] = c.input;
  j["output"] = c.output;
  j["naive"] = c.naive;
  j["roles"] = {{"group", c.roles.group},
                {"indicators", c.roles.indicators},
                {"low_covariates", c.roles.low_covariates},
                {"high_covariates", c.roles.high_covariates}};
  j["selection"] = {{"t_max", c.plan.t_max},
                    {"m_max", c.plan.m_max},
                    {"criterion_low", name_of(c.plan.criterion_low, kLowCriteria)},
                    {"criterion_high", name_of(c.plan.criterion_high, kHighCriteria)},
                    {"variant", name_of(c.plan.step2b_variant, kVariants)},
                    {"near_tie_threshold", c.plan.near_tie_threshold}};
  j["fit"] = {{"max_iterations", c.fit.max_iterations},
              {"tolerance", c.fit.loglik_tolerance},
              {"relative_tolerance", c.fit.relative_tolerance},
              {"random_starts", c.fit.n_random_starts},
              {"seed", c.fit.seed},
              {"newton_tolerance", c.fit.m_step_newton_tolerance},
              {"newton_max_iterations", c.fit.m_step_max_newton},
              {"threads", c.fit.n_threads}};
  j["step3"] = {{"split", c.step3.split}, {"random_slopes", c.step3.random_slopes}};
  j["bootstrap"] = {{"replicates", c.bootstrap.n_replicates},
                    {"resample", name_of(c.bootstrap.resample_unit, kResample)},
                    {"seed", c.bootstrap.seed},
                    {"threads", c.bootstrap.n_threads},
                    {"replicate_random_starts", c.bootstrap.replicate_random_starts}};
  if (c.simulation) j["simulate"] = simulation_json(*c.simulation);
  return j;
}

}  // namespace

void RunConfig::validate() const {
  plan.validate();
  fit.validate();
  bootstrap.validate();
  if (fit.n_threads < 1 || bootstrap.n_threads < 1) throw ConfigError("threads must be at least 1");
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  return parse_config_json(root);
}

RunConfig read_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open configuration " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c = parse_run_config(ss.str());
  // Paths inside a configuration file are relative to the file.
  const fs::path base = path.parent_path();
  if (!c.input.empty() && fs::path(c.input).is_relative()) c.input = (base / c.input).lexically_normal().string();
  if (fs::path(c.output).is_relative()) c.output = (base / c.output).lexically_normal().string();
  return c;
}

std::string run_config_json(const RunConfig& config) { return config_json(config).dump(2) + "\n"; }

GenerativeSpec default_simulation(std::uint64_t seed) {
  GenerativeSpec g = unconditional_spec(3, 2, 200, 50, 8, 2.5, seed);
  g.low_covariates = {{"x", CovariateKind::standard_normal}};
  g.high_covariates = {{"z", CovariateKind::standard_normal}};
  g.structural.gamma2 = Matrix::Constant(2, 1, 0.5);
  g.structural.gamma2(1, 0) = -0.5;
  g.structural.gamma1 = Matrix::Constant(2, 1, 0.3);
  g.structural.delta1 = Matrix::Constant(1, 1, 0.5);
  return g;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Context {
  RunConfig config;
  std::string command;
  fs::path out_dir;
  std::ostream* out = nullptr;
  std::vector<std::string> artifacts;
  json results = json::object();
  std::string stage;

  void csv(const std::string& name, const io::CsvTable& t) {
    io::write_csv(out_dir / name, t);
    artifacts.push_back(name);
  }
  void text(const std::string& name, const std::string& s) {
    io::write_text(out_dir / name, s);
    artifacts.push_back(name);
  }
  void snapshot(const std::string& name, const FitResult& f, const ColumnNames& names) {
    io::write_snapshot(out_dir / name, f, names);
    for (const char* file : {"measurement.csv", "structural.csv", "summary.csv"}) artifacts.push_back(name + "/" + file);
  }
};

io::LoadResult load_input(Context& ctx) {
  ctx.stage = "load";
  if (ctx.config.input.empty()) throw ConfigError("no input file given (--input or \"input\" in the configuration)");
  io::LoadResult r = io::load_data(ctx.config.input, ctx.config.roles);
  ctx.results["data"] = {{"rows_read", r.n_rows_read},
                         {"rows_dropped", r.n_rows_dropped},
                         {"units", r.data.n_units()},
                         {"groups", r.data.n_groups()},
                         {"items", r.data.n_items()},
                         {"level1_covariates", r.data.n_low_covariates()},
                         {"level2_covariates", r.data.n_high_covariates()}};
  *ctx.out << "loaded " << r.data.n_units() << " of " << r.n_rows_read << " rows (" << r.n_rows_dropped
           << " incomplete rows dropped), " << r.data.n_groups() << " groups, " << r.data.n_items() << " items\n";
  return r;
}

json summary_json(const FitResult& f) {
  json j{{"loglik", f.summary.loglik},
         {"npar", f.summary.npar},
         {"bic", f.summary.bic},
         {"converged", f.summary.converged},
         {"iterations", f.summary.n_iterations},
         {"entropy_r2_low", f.summary.entropy_r2_low}};
  if (f.summary.entropy_r2_high) j["entropy_r2_high"] = *f.summary.entropy_r2_high;
  if (f.summary.boundary) j["boundary"] = true;
  if (f.summary.degenerate_class) j["degenerate_class"] = true;
  return j;
}

void write_reports(Context& ctx, const FitResult& step2b, const ColumnNames& names) {
  ctx.csv("measurement_profile.csv", io::measurement_profile_table(step2b, names));
  ctx.text("measurement_profile.txt", io::render_measurement_profile(step2b, names));
  ctx.csv("class_profile.csv", io::class_profile_table(step2b, names));
}

void write_criterion(Context& ctx, const std::string& stem, const CriterionReport& r) {
  ctx.csv(stem + ".csv", io::criterion_table(r));
  ctx.text(stem + ".txt", io::render_criterion_report(r));
  *ctx.out << io::render_criterion_report(r) << '\n';
}

FitResult snapshot_or_fail(Context& ctx, const std::string& name, const ResponseData& data) {
  const fs::path dir = ctx.out_dir / name;
  if (!fs::exists(dir / "measurement.csv")) {
    throw ConfigError("no " + name + " snapshot in " + ctx.out_dir.string() + "; run the earlier step first");
  }
  return io::read_snapshot(dir, data);
}

void cmd_simulate(Context& ctx) {
  ctx.stage = "simulate";
  const GenerativeSpec spec = ctx.config.simulation ? *ctx.config.simulation : default_simulation(ctx.config.fit.seed);
  const SimulatedData sim = simulate(spec);
  io::write_data(ctx.out_dir / "data.csv", sim.data);
  ctx.artifacts.push_back("data.csv");
  io::write_measurement(ctx.out_dir / "truth" / "measurement.csv", spec.beta, sim.data.names().items);
  io::write_structural(ctx.out_dir / "truth" / "structural.csv", spec.structural, sim.data.names());
  ctx.artifacts.push_back("truth/measurement.csv");
  ctx.artifacts.push_back("truth/structural.csv");
  io::CsvTable classes;
  classes.header = {"unit", "group", "high_class", "low_class"};
  for (int i = 0; i < sim.data.n_units(); ++i) {
    const int g = sim.data.group_of()[static_cast<std::size_t>(i)];
    classes.rows.push_back({std::to_string(i + 1), sim.data.names().groups[static_cast<std::size_t>(g)],
                            "W" + std::to_string(sim.true_high[static_cast<std::size_t>(g)] + 1),
                            "X" + std::to_string(sim.true_low[static_cast<std::size_t>(i)] + 1)});
  }
  ctx.csv("truth/classes.csv", classes);

  // A ready-to-run configuration for the simulated file.
  RunConfig next = ctx.config;
  next.simulation = spec;
  next.input = "data.csv";
  next.output = "results";
  next.roles = io::roles_of(sim.data);
  ctx.text("config.json", run_config_json(next));
  ctx.results["simulation"] = {{"units", sim.data.n_units()}, {"groups", sim.data.n_groups()}, {"seed", spec.seed}};
  *ctx.out << "simulated " << sim.data.n_units() << " units in " << sim.data.n_groups() << " groups\n";
}

void cmd_load_check(Context& ctx) {
  const io::LoadResult r = load_input(ctx);
  ctx.stage = "rank check";
  if (r.data.n_low_covariates() + r.data.n_high_covariates() > 0) check_covariate_rank(r.data);
  *ctx.out << "level-1 covariates: " << r.data.n_low_covariates()
           << ", level-2 covariates: " << r.data.n_high_covariates() << "\n";
}

void cmd_fit_step1(Context& ctx) {
  const io::LoadResult r = load_input(ctx);
  ctx.stage = "step1";
  const Step1Selection s = select_step1(r.data, ctx.config.plan, ctx.config.fit);
  write_criterion(ctx, "step1_selection", s.report);
  ctx.snapshot("step1", s.fit, r.data.names());
  ctx.results["step1"] = {{"n_low", s.n_low}, {"fit", summary_json(s.fit)}};
}

void cmd_select(Context& ctx) {
  const io::LoadResult r = load_input(ctx);
  ctx.stage = "select";
  const SelectionResult s = hierarchical_select(r.data, ctx.config.plan, ctx.config.fit);
  write_criterion(ctx, "step1_selection", s.step1);
  write_criterion(ctx, "step2a_selection", s.step2a);
  write_criterion(ctx, "step2b_selection", s.step2b);
  ctx.snapshot("step1", s.step1_fit, r.data.names());
  ctx.snapshot("step2b", s.final_fit, r.data.names());
  write_reports(ctx, s.final_fit, r.data.names());
  ctx.results["selection"] = {{"n_low_step1", s.n_low_step1}, {"n_high", s.n_high}, {"n_low", s.n_low},
                              {"fit", summary_json(s.final_fit)}};
}

FitResult run_step3(Context& ctx, const ResponseData& data, const FitResult& step2b) {
  ctx.stage = "step3";
  const FitResult f = fit_step3(data, step2b, ctx.config.fit, ctx.config.step3);
  ctx.snapshot("step3", f, data.names());
  ctx.results["step3"] = summary_json(f);
  return f;
}

void run_bootstrap(Context& ctx, const ResponseData& data, const FitResult& step2b, const FitResult& step3) {
  ctx.stage = "bootstrap";
  const StructuralReport rep = bootstrap_stage2(data, step2b, step3, ctx.config.fit, ctx.config.bootstrap, ctx.config.step3);
  ctx.csv("structural_report.csv", io::structural_report_table(rep));
  ctx.text("structural_report.txt", io::render_structural_report(rep));
  *ctx.out << io::render_structural_report(rep) << '\n';
  ctx.results["bootstrap"] = {{"replicates", rep.n_replicates}, {"dropped", rep.n_dropped},
                              {"unreliable", rep.unreliable}, {"boundary", rep.boundary}};
}

void run_naive(Context& ctx, const ResponseData& data, const FitResult& step1) {
  ctx.stage = "naive";
  const StructuralReport rep = naive_estimator(data, step1, ctx.config.fit);
  ctx.csv("naive_report.csv", io::structural_report_table(rep));
  ctx.text("naive_report.txt", io::render_structural_report(rep));
  ctx.results["naive"] = {{"boundary", rep.boundary}};
}

void require_covariates(const ResponseData& data) {
  if (data.n_low_covariates() + data.n_high_covariates() == 0) {
    throw ConfigError("this step needs level-1 or level-2 covariates in the roles");
  }
}

void cmd_fit(Context& ctx) {
  const io::LoadResult r = load_input(ctx);
  require_covariates(r.data);
  const FitResult step2b = snapshot_or_fail(ctx, "step2b", r.data);
  run_step3(ctx, r.data, step2b);
}

void cmd_bootstrap(Context& ctx) {
  const io::LoadResult r = load_input(ctx);
  require_covariates(r.data);
  const FitResult step2b = snapshot_or_fail(ctx, "step2b", r.data);
  const FitResult step3 = fs::exists(ctx.out_dir / "step3" / "measurement.csv")
                              ? io::read_snapshot(ctx.out_dir / "step3", r.data)
                              : run_step3(ctx, r.data, step2b);
  run_bootstrap(ctx, r.data, step2b, step3);
}

void cmd_naive(Context& ctx) {
  const io::LoadResult r = load_input(ctx);
  require_covariates(r.data);
  const FitResult step1 = snapshot_or_fail(ctx, "step1", r.data);
  run_naive(ctx, r.data, step1);
}

void cmd_report(Context& ctx) {
  const io::LoadResult r = load_input(ctx);
  ctx.stage = "report";
  const FitResult step2b = snapshot_or_fail(ctx, "step2b", r.data);
  write_reports(ctx, step2b, r.data.names());
  *ctx.out << io::render_measurement_profile(step2b, r.data.names());
}

void cmd_pipeline(Context& ctx) {
  const io::LoadResult r = load_input(ctx);
  ctx.stage = "select";
  const SelectionResult s = hierarchical_select(r.data, ctx.config.plan, ctx.config.fit);
  write_criterion(ctx, "step1_selection", s.step1);
  write_criterion(ctx, "step2a_selection", s.step2a);
  write_criterion(ctx, "step2b_selection", s.step2b);
  ctx.snapshot("step1", s.step1_fit, r.data.names());
  ctx.snapshot("step2b", s.final_fit, r.data.names());
  ctx.stage = "report";
  write_reports(ctx, s.final_fit, r.data.names());
  ctx.results["selection"] = {{"n_low_step1", s.n_low_step1}, {"n_high", s.n_high}, {"n_low", s.n_low},
                              {"fit", summary_json(s.final_fit)}};
  if (r.data.n_low_covariates() + r.data.n_high_covariates() == 0) {
    ctx.results["skipped"] = "structural model, bootstrap and naive estimator: no covariates";
    return;
  }
  const FitResult step3 = run_step3(ctx, r.data, s.final_fit);
  run_bootstrap(ctx, r.data, s.final_fit, step3);
  if (ctx.config.naive) run_naive(ctx, r.data, s.step1_fit);
}

void write_manifest(Context& ctx, const std::string& status, const std::string& error) {
  json m;
  m["tool"] = "mlca";
  m["version"] = kVersion;
  m["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                       std::to_string(EIGEN_MINOR_VERSION);
  m["command"] = ctx.command;
  m["config"] = config_json(ctx.config);
  m["results"] = ctx.results;
  m["status"] = status;
  if (!error.empty()) {
    m["failed_stage"] = ctx.stage;
    m["error"] = error;
  }
  std::vector<std::string> files = ctx.artifacts;
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  m["artifacts"] = files;
  const std::string name = ctx.command == "pipeline" ? "run_manifest.json" : ctx.command + "_manifest.json";
  io::write_text(ctx.out_dir / name, m.dump(2) + "\n");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const DataError*>(&e) != nullptr) return 3;
  return 4;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multilevel latent class analysis for binary indicators"};
  app.set_version_flag("--version", std::string("mlca ") + kVersion);
  app.require_subcommand(1);

  struct Flags {
    std::string config, input, out, criterion_high, variant;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads, t_max, m_max, replicates;
  } flags;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate", "Simulate a dataset from a generative specification"},
      {"load-check", "Load and validate the input data"},
      {"fit-step1", "Step 1: pooled latent class models over T"},
      {"select", "Hierarchical selection of T and M (steps 1, 2a, 2b)"},
      {"fit", "Step 3: structural model with covariates from the step-2b snapshot"},
      {"bootstrap", "Bootstrap standard errors for the structural model"},
      {"naive", "Naive three-step estimator from the step-1 snapshot"},
      {"report", "Measurement profile and class profile from the step-2b snapshot"},
      {"pipeline", "Selection, structural model, bootstrap and naive estimator"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "JSON run configuration or run manifest");
    sub->add_option("--input", flags.input, "Input CSV (overrides the configuration)");
    sub->add_option("--out", flags.out, "Output directory (overrides the configuration)");
    sub->add_option("--seed", flags.seed, "Seed for fitting, bootstrap and simulation");
    sub->add_option("--threads", flags.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--t-max", flags.t_max, "Largest number of low-level classes")->check(CLI::PositiveNumber);
    sub->add_option("--m-max", flags.m_max, "Largest number of high-level classes")->check(CLI::PositiveNumber);
    sub->add_option("--criterion-high", flags.criterion_high, "High-level criterion")
        ->check(CLI::IsMember({"tic", "bic-group", "bic"}));
    sub->add_option("--replicates", flags.replicates, "Bootstrap replicates")->check(CLI::PositiveNumber);
    sub->add_option("--variant", flags.variant, "Step-2b variant")->check(CLI::IsMember({"full", "fix-w"}));
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  Context ctx;
  ctx.out = &out;
  for (auto* sub : subs)
    if (sub->parsed()) ctx.command = sub->get_name();

  bool manifest_ready = false;
  try {
    RunConfig c = flags.config.empty() ? RunConfig{} : read_run_config(flags.config);
    if (!flags.input.empty()) c.input = flags.input;
    if (!flags.out.empty()) c.output = flags.out;
    if (flags.seed) {
      c.fit.seed = *flags.seed;
      c.bootstrap.seed = *flags.seed;
      if (c.simulation) c.simulation->seed = *flags.seed;
    }
    if (flags.threads) {
      c.fit.n_threads = *flags.threads;
      c.bootstrap.n_threads = *flags.threads;
    }
    if (flags.t_max) c.plan.t_max = *flags.t_max;
    if (flags.m_max) c.plan.m_max = *flags.m_max;
    if (!flags.criterion_high.empty()) c.plan.criterion_high = enum_of(flags.criterion_high, kHighCriteria, "criterion");
    if (!flags.variant.empty()) c.plan.step2b_variant = enum_of(flags.variant, kVariants, "variant");
    if (flags.replicates) c.bootstrap.n_replicates = *flags.replicates;
    c.validate();
    ctx.config = c;
    ctx.out_dir = c.output;
    fs::create_directories(ctx.out_dir);
    manifest_ready = true;

    static const std::map<std::string, std::function<void(Context&)>> dispatch{
        {"simulate", cmd_simulate}, {"load-check", cmd_load_check}, {"fit-step1", cmd_fit_step1},
        {"select", cmd_select},     {"fit", cmd_fit},               {"bootstrap", cmd_bootstrap},
        {"naive", cmd_naive},       {"report", cmd_report},         {"pipeline", cmd_pipeline}};
    dispatch.at(ctx.command)(ctx);
    if (ctx.command != "load-check") write_manifest(ctx, "ok", "");
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    if (manifest_ready && ctx.command != "load-check") {
      try {
        write_manifest(ctx, "failed", e.what());
      } catch (const std::exception&) {
      }
    }
    return exit_code_for(e);
  }
}

}  // namespace mlca::cli
