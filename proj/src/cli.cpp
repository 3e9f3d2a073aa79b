#include "crk/cli.hpp"

#include "crk/errors.hpp"
#include "crk/eval.hpp"
#include "crk/filter.hpp"
#include "crk/io.hpp"
#include "crk/knockoffs.hpp"
#include "crk/parallel.hpp"
#include "crk/sim.hpp"

#include <CLI11.hpp>
#include <toml.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace crk {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string data, schema, response, response_column;
  std::uint64_t seed = 0;
  int trees = 500;
};

struct KnockoffArgs {
  std::string method = "cr-second";
  std::string out;
};

struct StatArgs {
  std::string knockoffs, statistic = "lcd", out;
  double bandwidth = 0.0, exponent = 1.0;
  int folds = 5;
};

struct SelectArgs {
  std::string w, out;
  double q = 0.2;
  int offset = 1;
  bool to_stdout = false;
};

std::optional<std::string> opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return s;
}

MixedDataset load_data(const Common& c) { return read_dataset(c.data, opt(c.schema)); }

Eigen::VectorXd load_response(const Common& c, Eigen::Index n) {
  Eigen::VectorXd y = read_response(c.response, opt(c.response_column));
  if (y.size() != n)
    throw DataError(c.response + ": response has " + std::to_string(y.size()) + " rows, data has " + std::to_string(n));
  return y;
}

ForestParams forest_params(int trees) {
  ForestParams p;
  p.n_trees = trees;
  return p;
}

KnockoffMatrix make_knockoffs(const Common& c, const KnockoffArgs& k, const MixedDataset& x) {
  return generate_knockoffs(parse_knockoff_method(k.method), x, forest_params(c.trees), c.seed);
}

WStatistics make_w(const Common& c, const StatArgs& s, const MixedDataset& x, const MixedDataset& xt,
                   const Eigen::VectorXd& y) {
  const StatisticMethod method = parse_statistic_method(s.statistic);
  if (method == StatisticMethod::MaldForest || method == StatisticMethod::MaldMlp) {
    MaldOptions o;
    o.backend = method == StatisticMethod::MaldForest ? MaldBackend::Forest : MaldBackend::Mlp;
    o.forest = forest_params(c.trees);
    o.bandwidth = s.bandwidth;
    o.exponent = s.exponent;
    o.seed = c.seed;
    return mald_statistics(y, x, xt, o);
  }
  ExperimentSpec spec;
  spec.lasso_folds = s.folds;
  spec.statistic_forest = forest_params(c.trees);
  return compute_statistic(method, x, xt, y, spec, c.seed);
}

void add_common(CLI::App* cmd, Common& c, bool response) {
  cmd->add_option("--data", c.data, "Feature CSV with header")->required();
  cmd->add_option("--schema", c.schema, "TOML schema file");
  if (response) {
    cmd->add_option("--response", c.response, "Response CSV")->required();
    cmd->add_option("--response-column", c.response_column, "Response column name");
  }
  cmd->add_option("--seed", c.seed, "Random seed")->required();
  cmd->add_option("--trees", c.trees, "Trees per forest")->check(CLI::PositiveNumber);
}

void add_stat_options(CLI::App* cmd, StatArgs& s) {
  cmd->add_option("--statistic", s.statistic, "lcd | lasso-max | mald-forest | mald-mlp | gini");
  cmd->add_option("--bandwidth", s.bandwidth, "MALD finite-difference bandwidth (default n^-1/5)");
  cmd->add_option("--exponent", s.exponent, "MALD exponent r")->check(CLI::PositiveNumber);
  cmd->add_option("--folds", s.folds, "Lasso cross-validation folds")->check(CLI::Range(2, 1000));
}

void add_select_options(CLI::App* cmd, SelectArgs& s) {
  cmd->add_option("--q", s.q, "Target FDR")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--offset", s.offset, "0 = knockoff, 1 = knockoff+")->check(CLI::IsMember({0, 1}));
}

void check_q(double q) {
  if (!(q > 0.0 && q < 1.0)) throw UsageError("--q must lie strictly between 0 and 1");
}

// ---------------------------------------------------------------------------

template <typename T>
T get_or(const toml::table& t, const char* key, T fallback) {
  const auto node = t[key];
  if (!node) return fallback;
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = node.value<double>()) return *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node.value<bool>()) return *v;
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node.value<std::string>()) return *v;
  } else {
    if (auto v = node.value<std::int64_t>()) return static_cast<T>(*v);
  }
  throw DataError(std::string("config key '") + key + "' has the wrong type");
}

ExperimentSpec read_experiment(const std::string& path) {
  toml::table t;
  try {
    t = toml::parse_file(path);
  } catch (const toml::parse_error& e) {
    throw DataError(path + ": line " + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
  }
  if (!t.contains("seed")) throw DataError(path + ": 'seed' is required");
  const auto seed = t["seed"].value<std::int64_t>();
  if (!seed || *seed < 0) throw DataError(path + ": 'seed' must be a non-negative integer");

  ExperimentSpec s;
  const int n = get_or<int>(t, "n", 1024), p = get_or<int>(t, "p", 128);
  s.config = SimConfig::desk(n, p, static_cast<std::uint64_t>(*seed));
  s.config.n_numeric = get_or<int>(t, "n_numeric", s.config.n_numeric);
  s.config.n_cat2 = get_or<int>(t, "n_cat2", s.config.n_cat2);
  s.config.n_cat3 = get_or<int>(t, "n_cat3", s.config.n_cat3);
  s.config.beta = get_or<double>(t, "beta", 1.0);
  s.config.modes = get_or<int>(t, "modes", 5);
  s.config.rho = get_or<double>(t, "rho", 0.5);
  s.config.mode_delta = get_or<double>(t, "mode_delta", 3.0);
  const std::string outcome = get_or<std::string>(t, "outcome", "linear");
  if (outcome == "linear") s.outcome = OutcomeKind::Linear;
  else if (outcome == "nonlinear") s.outcome = OutcomeKind::Nonlinear;
  else throw DataError(path + ": outcome must be 'linear' or 'nonlinear'");
  s.knockoff = parse_knockoff_method(get_or<std::string>(t, "knockoff", "second-order"));
  s.statistic = parse_statistic_method(get_or<std::string>(t, "statistic", "lcd"));
  s.q = get_or<double>(t, "q", 0.2);
  s.offset = get_or<int>(t, "offset", 1);
  s.n_reps = get_or<int>(t, "reps", 100);
  s.knockoff_forest.n_trees = get_or<int>(t, "trees", 500);
  s.statistic_forest.n_trees = get_or<int>(t, "statistic_trees", s.knockoff_forest.n_trees);
  s.mlp.epochs = get_or<int>(t, "mlp_epochs", s.mlp.epochs);
  s.lasso_folds = get_or<int>(t, "folds", 5);
  s.record_time = get_or<bool>(t, "timing", true);
  try {
    validate_config(s.config);
  } catch (const std::invalid_argument& e) {
    throw DataError(path + ": " + e.what());
  }
  if (!(s.q > 0.0 && s.q < 1.0)) throw DataError(path + ": q must lie in (0, 1)");
  if (s.offset != 0 && s.offset != 1) throw DataError(path + ": offset must be 0 or 1");
  if (s.n_reps < 1) throw DataError(path + ": reps must be >= 1");
  if (s.knockoff_forest.n_trees < 1 || s.statistic_forest.n_trees < 1) throw DataError(path + ": trees must be >= 1");
  return s;
}

CsvTable results_table(const ExperimentResult& r) {
  CsvTable t;
  t.header = {"rep", "method", "statistic", "q", "fdp", "power", "n_selected", "seconds"};
  for (const auto& rep : r.replicates) {
    const bool ok = rep.error.empty();
    t.rows.push_back({std::to_string(rep.rep), rep.method, rep.statistic, format_double(rep.q),
                      ok ? format_double(rep.fdp) : "nan", ok ? format_double(rep.power) : "nan",
                      ok ? std::to_string(rep.n_selected) : "nan", format_double(rep.seconds)});
  }
  return t;
}

std::vector<int> parse_selection_list(const std::string& list, const MixedDataset& x) {
  std::vector<int> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    int found = -1;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (x.column(j).name == name) found = static_cast<int>(j);
    if (found < 0) throw DataError("no column named '" + name + "'");
    out.push_back(found);
  }
  return out;
}

std::vector<int> read_selection_file(const std::string& path, const MixedDataset& x) {
  const CsvTable t = read_csv(path);
  const auto fc = std::find(t.header.begin(), t.header.end(), "feature");
  const auto sc = std::find(t.header.begin(), t.header.end(), "selected");
  if (fc == t.header.end() || sc == t.header.end()) throw DataError(path + ": selection file needs feature,selected columns");
  std::string list;
  for (const auto& row : t.rows)
    if (row[static_cast<std::size_t>(sc - t.header.begin())] == "true")
      list += row[static_cast<std::size_t>(fc - t.header.begin())] + ",";
  return parse_selection_list(list, x);
}

int run(CLI::App& app, const std::vector<std::string>& args) {
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  KnockoffArgs kargs;
  StatArgs sargs;
  SelectArgs selargs;

  auto* knock = app.add_subcommand("knockoff", "Generate knockoffs for a dataset");
  add_common(knock, common, false);
  knock->add_option("--method", kargs.method, "second-order | cr-second | cr-permute | scip-permute | scip-second");
  knock->add_option("--out", kargs.out, "Knockoff CSV")->required();

  auto* stats = app.add_subcommand("stats", "Compute knockoff statistics W");
  add_common(stats, common, true);
  stats->add_option("--knockoffs", sargs.knockoffs, "Knockoff CSV")->required();
  add_stat_options(stats, sargs);
  stats->add_option("--out", sargs.out, "W CSV")->required();

  auto* sel = app.add_subcommand("select", "Knockoff filter on a W file");
  sel->add_option("w", selargs.w, "W CSV")->required();
  add_select_options(sel, selargs);
  sel->add_option("--out", selargs.out, "Selection CSV (default: selection.csv beside the input)");
  sel->add_flag("--stdout", selargs.to_stdout, "Write the selection to standard output");

  std::string out_dir;
  auto* pipe = app.add_subcommand("pipeline", "knockoff, stats and select in one run");
  add_common(pipe, common, true);
  pipe->add_option("--method", kargs.method, "Knockoff method");
  add_stat_options(pipe, sargs);
  add_select_options(pipe, selargs);
  pipe->add_option("--out-dir", out_dir, "Output directory")->required();

  std::string config, sim_out;
  bool sim_stdout = false;
  auto* sim = app.add_subcommand("simulate", "Run a simulation experiment from a TOML config");
  sim->add_option("--config", config, "Experiment TOML")->required();
  sim->add_option("--out", sim_out, "Results CSV");
  sim->add_flag("--stdout", sim_stdout, "Write results to standard output");

  std::string cv_select, cv_selection, cv_out;
  int cv_k = 10;
  auto* cv = app.add_subcommand("cv", "Cross-validated OLS MSE of a feature selection");
  cv->add_option("--data", common.data, "Feature CSV with header")->required();
  cv->add_option("--schema", common.schema, "TOML schema file");
  cv->add_option("--response", common.response, "Response CSV")->required();
  cv->add_option("--response-column", common.response_column, "Response column name");
  cv->add_option("--select", cv_select, "Comma-separated column names");
  cv->add_option("--selection", cv_selection, "Selection CSV from `select`");
  cv->add_option("--k", cv_k, "Folds")->check(CLI::Range(2, 100000));
  cv->add_option("--seed", common.seed, "Fold assignment seed")->required();
  cv->add_option("--out", cv_out, "Report CSV")->required();

  std::string age_in, age_col, age_out, age_into;
  auto* age = app.add_subcommand("transform-age", "Apply the age transform to a column");
  age->add_option("--data", age_in, "Input CSV")->required();
  age->add_option("--column", age_col, "Age column (years)")->required();
  age->add_option("--into", age_into, "Name of a new column (default: replace in place)");
  age->add_option("--out", age_out, "Output CSV")->required();

  std::vector<std::string> argv_rest;
  if (!args.empty()) argv_rest.assign(args.rbegin(), args.rend() - 1);
  app.parse(argv_rest);
  set_thread_count(threads);

  if (*knock) {
    const MixedDataset x = load_data(common);
    write_knockoffs(make_knockoffs(common, kargs, x), kargs.out);
  } else if (*stats) {
    const MixedDataset x = load_data(common);
    const MixedDataset xt = read_dataset_like(sargs.knockoffs, x);
    const Eigen::VectorXd y = load_response(common, x.rows());
    write_w(make_w(common, sargs, x, xt, y), sargs.out);
  } else if (*sel) {
    check_q(selargs.q);
    const WStatistics w = read_w(selargs.w);
    const SelectionResult r = select_features(w.w, selargs.q, selargs.offset);
    if (selargs.to_stdout) {
      std::cout << format_csv(selection_table(r, w.feature_names));
    } else {
      const std::string out = selargs.out.empty() ? (fs::path(selargs.w).parent_path() / "selection.csv").string() : selargs.out;
      write_selection(r, w.feature_names, out);
    }
  } else if (*pipe) {
    check_q(selargs.q);
    const MixedDataset x = load_data(common);
    const Eigen::VectorXd y = load_response(common, x.rows());
    const KnockoffMatrix xt = make_knockoffs(common, kargs, x);
    const WStatistics w = make_w(common, sargs, x, xt.data, y);
    const SelectionResult r = select_features(w.w, selargs.q, selargs.offset);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create '" + out_dir + "'");
    const fs::path dir(out_dir);
    write_knockoffs(xt, (dir / "knockoffs.csv").string());
    write_w(w, (dir / "w.csv").string());
    write_selection(r, w.feature_names, (dir / "selection.csv").string());
  } else if (*sim) {
    if (sim_out.empty() && !sim_stdout) throw UsageError("simulate needs --out or --stdout");
    const ExperimentSpec spec = read_experiment(config);
    const ExperimentResult r = run_experiment(spec);
    for (const auto& rep : r.replicates)
      if (!rep.error.empty()) std::cerr << "rep " << rep.rep << " failed: " << rep.error << "\n";
    std::cerr << "completed " << r.summary.completed << "/" << r.replicates.size() << " reps; mean fdp "
              << r.summary.mean_fdp << " (se " << r.summary.se_fdp << "), mean power " << r.summary.mean_power
              << " (se " << r.summary.se_power << ")\n";
    const std::string csv = format_csv(results_table(r));
    if (sim_stdout) std::cout << csv;
    if (!sim_out.empty()) write_file_atomic(sim_out, csv);
  } else if (*cv) {
    const MixedDataset x = load_data(common);
    const Eigen::VectorXd y = load_response(common, x.rows());
    if (!cv_select.empty() && !cv_selection.empty()) throw UsageError("use either --select or --selection");
    const std::vector<int> chosen =
        cv_selection.empty() ? parse_selection_list(cv_select, x) : read_selection_file(cv_selection, x);
    const CvReport rep = cv_ols_mse(x, chosen, y, cv_k, common.seed);
    CsvTable t;
    t.header = {"fold", "mse"};
    for (std::size_t f = 0; f < rep.fold_mses.size(); ++f) t.rows.push_back({std::to_string(f + 1), format_double(rep.fold_mses[f])});
    t.rows.push_back({"mean", format_double(rep.mean_mse)});
    write_file_atomic(cv_out, format_csv(t));
  } else if (*age) {
    CsvTable t = read_csv(age_in);
    const auto it = std::find(t.header.begin(), t.header.end(), age_col);
    if (it == t.header.end()) throw DataError(age_in + ": no column named '" + age_col + "'");
    const auto j = static_cast<std::size_t>(it - t.header.begin());
    if (!age_into.empty()) t.header.push_back(age_into);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto v = parse_double(t.rows[i][j]);
      if (!v) throw DataError(age_in + ": row " + std::to_string(i + 1) + ": age is not a number");
      if (*v < 0 || !std::isfinite(*v)) throw DataError(age_in + ": row " + std::to_string(i + 1) + ": age must be finite and >= 0");
      const std::string f = format_double(age_transform(*v));
      if (age_into.empty()) t.rows[i][j] = f;
      else t.rows[i].push_back(f);
    }
    write_file_atomic(age_out, format_csv(t));
  }
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"Knockoff feature selection with conditional-residual forests"};
  app.name(args.empty() ? "crk" : fs::path(args[0]).filename().string());
  try {
    return run(app, args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

int cli_main(int argc, char** argv) {
  return cli_main(std::vector<std::string>(argv, argv + argc));
}

}  // namespace crk
