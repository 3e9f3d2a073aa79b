#include "crk/sim.hpp"

#include "crk/errors.hpp"
#include "crk/filter.hpp"
#include "crk/knockoffs.hpp"
#include "crk/parallel.hpp"
#include "crk/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

namespace crk {

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Proportional remap of reference offsets onto a block of `size` columns.
std::vector<int> remap(const std::vector<int>& offsets, int reference, int size) {
  if (size < static_cast<int>(offsets.size()))
    throw std::invalid_argument("block of " + std::to_string(size) + " columns cannot hold " +
                                std::to_string(offsets.size()) + " active features");
  std::vector<int> out;
  std::set<int> used;
  for (int off : offsets) {
    const int start = static_cast<int>(static_cast<long long>(off) * size / reference);
    int c = start;
    while (used.count(c) && c < size - 1) ++c;
    if (used.count(c)) {
      c = start;
      while (used.count(c)) --c;
    }
    used.insert(c);
    out.push_back(c);
  }
  return out;
}

std::vector<int> shifted(std::vector<int> v, int by) {
  for (int& x : v) x += by;
  return v;
}

void check_columns(const OutcomeSpec& spec, const Eigen::MatrixXd& values) {
  const auto p = static_cast<int>(values.cols());
  for (int c : spec.active_columns())
    if (c < 0 || c >= p) throw DataError("outcome references missing column " + std::to_string(c + 1));
}

}  // namespace

SimConfig SimConfig::desk(int n, int p, std::uint64_t seed) {
  SimConfig c;
  c.n = n;
  c.p = p;
  c.n_numeric = 3 * p / 4;
  c.n_cat2 = p / 8;
  c.n_cat3 = p - c.n_numeric - c.n_cat2;
  c.seed = seed;
  return c;
}

void validate_config(const SimConfig& c) {
  if (c.n < 2) throw std::invalid_argument("n must be >= 2");
  if (c.p < 1) throw std::invalid_argument("p must be >= 1");
  if (c.n_numeric < 0 || c.n_cat2 < 0 || c.n_cat3 < 0 || c.n_numeric + c.n_cat2 + c.n_cat3 != c.p)
    throw std::invalid_argument("n_numeric + n_cat2 + n_cat3 must equal p");
  if (c.modes < 1) throw std::invalid_argument("modes must be >= 1");
  if (!(c.rho >= 0.0 && c.rho < 1.0)) throw std::invalid_argument("rho must lie in [0, 1)");
  if (!std::isfinite(c.beta) || !std::isfinite(c.mode_delta)) throw std::invalid_argument("beta and mode_delta must be finite");
}

Eigen::MatrixXd mode_means(const SimConfig& config) {
  validate_config(config);
  Rng rng = make_rng(config.seed, {stream::kModeMeans});
  std::bernoulli_distribution coin(0.5);
  Eigen::MatrixXd means(config.modes, config.p);
  for (int m = 0; m < config.modes; ++m)
    for (int j = 0; j < config.p; ++j) means(m, j) = coin(rng) ? config.mode_delta : -config.mode_delta;
  return means;
}

std::vector<double> mixture_quantile_cuts(std::span<const double> mu, int levels) {
  if (mu.empty()) throw std::invalid_argument("mixture needs at least one component");
  if (levels < 2) throw std::invalid_argument("need at least 2 levels");
  const auto [lo_it, hi_it] = std::minmax_element(mu.begin(), mu.end());
  auto cdf = [&](double t) {
    double s = 0.0;
    for (double m : mu) s += normal_cdf(t - m);
    return s / static_cast<double>(mu.size());
  };
  std::vector<double> cuts;
  for (int k = 1; k < levels; ++k) {
    const double target = static_cast<double>(k) / levels;
    double lo = *lo_it - 12.0, hi = *hi_it + 12.0;
    for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo)); ++it) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < target ? lo : hi) = mid;
    }
    cuts.push_back(0.5 * (lo + hi));
  }
  return cuts;
}

Covariates gen_mixture_covariates(const SimConfig& config) {
  return gen_mixture_covariates(config, mode_means(config), config.seed);
}

Covariates gen_mixture_covariates(const SimConfig& config, const Eigen::MatrixXd& means, std::uint64_t draw_seed) {
  validate_config(config);
  if (means.rows() != config.modes || means.cols() != config.p)
    throw std::invalid_argument("mode mean matrix has the wrong shape");
  const int n = config.n, p = config.p;
  Rng rng = make_rng(draw_seed, {stream::kCovariates});
  std::uniform_int_distribution<int> pick(0, config.modes - 1);
  std::normal_distribution<double> gauss;
  const double innov = std::sqrt(1.0 - config.rho * config.rho);

  Covariates out;
  out.mode.resize(static_cast<std::size_t>(n));
  Eigen::MatrixXd z(n, p);
  for (int i = 0; i < n; ++i) {
    const int m = pick(rng);
    out.mode[static_cast<std::size_t>(i)] = m;
    double prev = 0.0;
    for (int j = 0; j < p; ++j) {
      const double e = gauss(rng);
      prev = j == 0 ? e : config.rho * prev + innov * e;
      z(i, j) = means(m, j) + prev;
    }
  }

  std::vector<ColumnSchema> schema;
  for (int j = 0; j < p; ++j) {
    const std::string name = "x" + std::to_string(j + 1);
    const int K = j < config.n_numeric ? 0 : (j < config.n_numeric + config.n_cat2 ? 2 : 3);
    if (K == 0) {
      schema.push_back(ColumnSchema::numeric(name));
      continue;
    }
    schema.push_back(ColumnSchema::categorical(name, K));
    std::vector<double> mu(static_cast<std::size_t>(config.modes));
    for (int m = 0; m < config.modes; ++m) mu[static_cast<std::size_t>(m)] = means(m, j);
    const auto cuts = mixture_quantile_cuts(mu, K);
    for (int i = 0; i < n; ++i) {
      int level = 1;
      for (double c : cuts)
        if (z(i, j) > c) ++level;
      z(i, j) = level;
    }
  }
  out.data = MixedDataset(std::move(z), std::move(schema));
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::pair<std::string, std::function<double(double)>>>& nonlinear_function_registry() {
  static const std::vector<std::pair<std::string, std::function<double(double)>>> registry = {
      {"Cauchy", [](double x) { return 3.76 / (1.0 + x * x); }},
      {"Log", [](double x) { return 1.94 * std::log(1.0 + x * x); }},
      {"Square", [](double x) { return 0.7 * x * x; }},
      {"Sin", [](double x) { return 1.42 * std::sin(2.0 * std::numbers::pi * x); }},
      {"Cos", [](double x) { return 1.42 * std::cos(2.0 * std::numbers::pi * x); }},
      {"SquareRoot", [](double x) { return 2.86 * std::sqrt(std::abs(x)); }},
      {"Linear", [](double x) { return x; }},
  };
  return registry;
}

double apply_nonlinear(const std::string& name, double x) {
  for (const auto& [key, f] : nonlinear_function_registry())
    if (key == name) return f(x);
  throw std::invalid_argument("unknown nonlinear function '" + name + "'");
}

std::vector<int> OutcomeSpec::active_columns() const {
  std::set<int> s;
  for (const auto& t : numeric) s.insert(t.column);
  for (const auto& t : interactions) {
    s.insert(t.a);
    s.insert(t.b);
  }
  for (const auto& t : categorical) s.insert(t.column);
  return {s.begin(), s.end()};
}

ActiveLayout active_layout(int n_numeric, int n_cat2, int n_cat3) {
  ActiveLayout a;
  a.numeric = remap({1, 6, 30, 85, 86}, 96, n_numeric);
  a.cat2 = shifted(remap({1, 2}, 16, n_cat2), n_numeric);
  a.cat3 = shifted(remap({0, 13, 15}, 16, n_cat3), n_numeric + n_cat2);
  return a;
}

namespace {

void add_categorical_terms(OutcomeSpec& spec, const ActiveLayout& layout) {
  spec.categorical.push_back({layout.cat2[0], {-2.0, 2.0}});
  spec.categorical.push_back({layout.cat2[1], {-2.0, 2.0}});
  spec.categorical.push_back({layout.cat3[0], {1.0, -2.0, -2.0}});
  spec.categorical.push_back({layout.cat3[1], {-2.0, -1.0, 1.0}});
  spec.categorical.push_back({layout.cat3[2], {2.0, -2.0, 1.0}});
}

}  // namespace

OutcomeSpec linear_spec(const ActiveLayout& layout) {
  OutcomeSpec s;
  s.kind = OutcomeKind::Linear;
  const double sign[] = {1, -1, 1, -1, 1};
  for (int k = 0; k < 5; ++k) s.numeric.push_back({layout.numeric[static_cast<std::size_t>(k)], "Linear", sign[k]});
  add_categorical_terms(s, layout);
  return s;
}

OutcomeSpec nonlinear_spec(const ActiveLayout& layout) {
  OutcomeSpec s;
  s.kind = OutcomeKind::Nonlinear;
  s.numeric.push_back({layout.numeric[0], "Cauchy", 1.0});
  s.numeric.push_back({layout.numeric[1], "Log", -1.0});
  s.numeric.push_back({layout.numeric[2], "Sin", 1.0});
  s.interactions.push_back({layout.numeric[3], layout.numeric[4], -0.25, 0.25, 1.0});
  add_categorical_terms(s, layout);
  return s;
}

ActiveLayout layout_of(const MixedDataset& x) {
  int blocks[3] = {0, 0, 0};
  int stage = 0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto& c = x.column(j);
    const int kind = !c.is_categorical() ? 0 : (c.levels == 2 ? 1 : (c.levels == 3 ? 2 : -1));
    if (kind < 0 || kind < stage)
      throw DataError("dataset is not laid out as numeric, two-level, three-level blocks");
    stage = kind;
    ++blocks[kind];
  }
  try {
    return active_layout(blocks[0], blocks[1], blocks[2]);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("missing columns: ") + e.what());
  }
}

Eigen::VectorXd outcome_signal(const OutcomeSpec& spec, const Eigen::MatrixXd& values, double beta) {
  check_columns(spec, values);
  const Eigen::Index n = values.rows();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  for (const auto& t : spec.numeric)
    for (Eigen::Index i = 0; i < n; ++i) f[i] += t.coefficient * apply_nonlinear(t.function, values(i, t.column));
  for (const auto& t : spec.interactions)
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = values(i, t.a), b = values(i, t.b);
      f[i] += t.coefficient * (a * b + t.weight_a * a + t.weight_b * b);
    }
  for (const auto& t : spec.categorical)
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto level = static_cast<long>(std::lround(values(i, t.column)));
      if (level >= 1 && level <= static_cast<long>(t.level_coefficients.size()))
        f[i] += t.level_coefficients[static_cast<std::size_t>(level - 1)];
    }
  return beta * f;
}

Eigen::VectorXd generate_outcome(const OutcomeSpec& spec, const MixedDataset& x, double beta, std::uint64_t seed) {
  Eigen::VectorXd y = outcome_signal(spec, x.values(), beta);
  Rng rng = make_rng(seed, {stream::kNoise});
  std::normal_distribution<double> gauss;
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += gauss(rng);
  return y;
}

Eigen::VectorXd linear_outcome(const MixedDataset& x, double beta, std::uint64_t seed) {
  return generate_outcome(linear_spec(layout_of(x)), x, beta, seed);
}

Eigen::VectorXd nonlinear_outcome(const MixedDataset& x, double beta, std::uint64_t seed) {
  return generate_outcome(nonlinear_spec(layout_of(x)), x, beta, seed);
}

// ---------------------------------------------------------------------------

std::string to_string(KnockoffMethod m) {
  switch (m) {
    case KnockoffMethod::SecondOrder: return "second-order";
    case KnockoffMethod::CrSecond: return "cr-second";
    case KnockoffMethod::CrPermute: return "cr-permute";
    case KnockoffMethod::ScipPermute: return "scip-permute";
    case KnockoffMethod::ScipSecond: return "scip-second";
  }
  return "?";
}

std::string to_string(StatisticMethod m) {
  switch (m) {
    case StatisticMethod::Lcd: return "lcd";
    case StatisticMethod::LassoMax: return "lasso-max";
    case StatisticMethod::MaldForest: return "mald-forest";
    case StatisticMethod::MaldMlp: return "mald-mlp";
    case StatisticMethod::Gini: return "gini";
  }
  return "?";
}

KnockoffMethod parse_knockoff_method(const std::string& name) {
  for (auto m : {KnockoffMethod::SecondOrder, KnockoffMethod::CrSecond, KnockoffMethod::CrPermute,
                 KnockoffMethod::ScipPermute, KnockoffMethod::ScipSecond})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown knockoff method '" + name + "'");
}

StatisticMethod parse_statistic_method(const std::string& name) {
  for (auto m : {StatisticMethod::Lcd, StatisticMethod::LassoMax, StatisticMethod::MaldForest,
                 StatisticMethod::MaldMlp, StatisticMethod::Gini})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown statistic '" + name + "'");
}

KnockoffMatrix generate_knockoffs(KnockoffMethod method, const MixedDataset& x, const ForestParams& forest,
                                  std::uint64_t seed) {
  ForestParams params = forest;
  params.seed = derive_seed(seed, {stream::kColumnModel});
  const std::uint64_t cseed = derive_seed(seed, {stream::kResidualKnockoff});
  using G = ResidualKnockoffGenerator::Kind;
  switch (method) {
    case KnockoffMethod::SecondOrder:
      return x.all_numeric() ? second_order_knockoffs(x, seed) : second_order_knockoffs_mixed(x, seed);
    case KnockoffMethod::CrSecond:
      return conditional_residual_knockoffs(x, params, {G::SecondOrderOnResiduals, cseed});
    case KnockoffMethod::CrPermute:
      return conditional_residual_knockoffs(x, params, {G::PermuteResiduals, cseed});
    case KnockoffMethod::ScipPermute:
      return scip_forest_knockoffs(x, params, {G::PermuteResiduals, cseed});
    case KnockoffMethod::ScipSecond:
      return scip_forest_knockoffs(x, params, {G::SecondOrderOnResiduals, cseed});
  }
  throw std::invalid_argument("unknown knockoff method");
}

WStatistics compute_statistic(StatisticMethod method, const MixedDataset& x, const MixedDataset& xt,
                              const Eigen::VectorXd& y, const ExperimentSpec& spec, std::uint64_t seed) {
  switch (method) {
    case StatisticMethod::Lcd: {
      LassoStatOptions o;
      o.n_folds = spec.lasso_folds;
      o.seed = seed;
      return lcd_statistics(x, xt, y, o);
    }
    case StatisticMethod::LassoMax:
      return lasso_max_statistics(x, xt, y);
    case StatisticMethod::MaldForest:
    case StatisticMethod::MaldMlp: {
      MaldOptions o;
      o.backend = method == StatisticMethod::MaldForest ? MaldBackend::Forest : MaldBackend::Mlp;
      o.forest = spec.statistic_forest;
      o.mlp = spec.mlp;
      o.seed = seed;
      return mald_statistics(y, x, xt, o);
    }
    case StatisticMethod::Gini: {
      ForestParams params = spec.statistic_forest;
      params.seed = seed;
      return gini_statistics(y, x, xt, params);
    }
  }
  throw std::invalid_argument("unknown statistic");
}

ExperimentSummary summarize(const std::vector<ReplicateResult>& replicates) {
  ExperimentSummary s;
  std::vector<double> fdp, power;
  for (const auto& r : replicates) {
    if (!r.error.empty()) {
      ++s.failed;
      continue;
    }
    fdp.push_back(r.fdp);
    power.push_back(r.power);
  }
  s.completed = static_cast<int>(fdp.size());
  auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
    if (v.empty()) return;
    double sum = 0.0;
    for (double x : v) sum += x;
    mean = sum / static_cast<double>(v.size());
    if (v.size() < 2) return;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  };
  mean_se(fdp, s.mean_fdp, s.se_fdp);
  mean_se(power, s.mean_power, s.se_power);
  return s;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  validate_config(spec.config);
  if (spec.n_reps < 1) throw std::invalid_argument("n_reps must be >= 1");
  if (!(spec.q > 0.0 && spec.q < 1.0)) throw std::invalid_argument("q must lie in (0, 1)");
  const Eigen::MatrixXd means = mode_means(spec.config);
  const ActiveLayout layout = active_layout(spec.config.n_numeric, spec.config.n_cat2, spec.config.n_cat3);
  OutcomeSpec outcome = spec.outcome == OutcomeKind::Linear      ? linear_spec(layout)
                        : spec.outcome == OutcomeKind::Nonlinear ? nonlinear_spec(layout)
                                                                 : spec.custom;
  const std::vector<int> truth = outcome.active_columns();

  ExperimentResult result;
  result.replicates.resize(static_cast<std::size_t>(spec.n_reps));
  parallel_for(static_cast<std::size_t>(spec.n_reps), [&](std::size_t r) {
    ReplicateResult& out = result.replicates[r];
    out.rep = static_cast<int>(r) + 1;
    out.method = to_string(spec.knockoff);
    out.statistic = to_string(spec.statistic);
    out.q = spec.q;
    const std::uint64_t rs = derive_seed(spec.config.seed, {stream::kReplicate, r});
    const auto start = std::chrono::steady_clock::now();
    try {
      const Covariates cov = gen_mixture_covariates(spec.config, means, rs);
      const Eigen::VectorXd y = generate_outcome(outcome, cov.data, spec.config.beta, rs);
      const KnockoffMatrix xt =
          generate_knockoffs(spec.knockoff, cov.data, spec.knockoff_forest, derive_seed(rs, {stream::kResidualKnockoff}));
      const WStatistics w =
          compute_statistic(spec.statistic, cov.data, xt.data, y, spec, derive_seed(rs, {stream::kStatistic}));
      const SelectionResult sel = select_features(w.w, spec.q, spec.offset);
      const SelectionQuality quality = evaluate_selection(sel.selected, truth);
      out.fdp = quality.fdp;
      out.power = quality.power;
      out.n_selected = static_cast<int>(sel.selected.size());
    } catch (const std::exception& e) {
      out.error = e.what();
      out.fdp = out.power = std::numeric_limits<double>::quiet_NaN();
    }
    if (spec.record_time)
      out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  result.summary = summarize(result.replicates);
  return result;
}

}  // namespace crk
