// One PASS/FAIL line per acceptance criterion. Usage: crk_acceptance [ids...]
#include "crk/eval.hpp"
#include "crk/filter.hpp"
#include "crk/importance.hpp"
#include "crk/knockoffs.hpp"
#include "crk/lasso.hpp"
#include "crk/linalg.hpp"
#include "crk/mlp.hpp"
#include "crk/parallel.hpp"
#include "crk/rng.hpp"
#include "crk/sim.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

using namespace crk;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Eigen::MatrixXd gaussian(int n, const Eigen::MatrixXd& sigma, Rng& rng) {
  std::normal_distribution<double> g;
  const Eigen::MatrixXd l = sigma.llt().matrixL();
  Eigen::MatrixXd z(n, sigma.rows());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < sigma.rows(); ++j) z(i, j) = g(rng);
  return z * l.transpose();
}

Eigen::MatrixXd ar1(int p, double rho) {
  Eigen::MatrixXd s(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) s(i, j) = std::pow(rho, std::abs(i - j));
  return s;
}

ExperimentSpec desk_spec(double beta, std::uint64_t seed) {
  ExperimentSpec spec;
  spec.config = SimConfig::desk(512, 32, seed);
  spec.config.beta = beta;
  spec.config.modes = 3;
  spec.config.rho = 0.5;
  spec.q = 0.2;
  spec.offset = 1;
  spec.n_reps = 100;
  return spec;
}

// --- 1 ----------------------------------------------------------------------
Outcome global_null() {
  auto spec = desk_spec(0.0, 101);
  spec.knockoff = KnockoffMethod::SecondOrder;
  spec.statistic = StatisticMethod::Lcd;
  const auto t = Clock::now();
  const auto r = run_experiment(spec);
  const double secs = seconds_since(t);
  const auto& s = r.summary;
  const bool ok = s.failed == 0 && s.mean_fdp <= 0.2 + 2 * s.se_fdp && secs < 300.0;
  return {ok, fmt("mean FDP %.4f (SE %.4f, bound %.4f), %d failed reps, %.0f s (target < 300 s)", s.mean_fdp, s.se_fdp,
                  0.2 + 2 * s.se_fdp, s.failed, secs)};
}

// --- 2 ----------------------------------------------------------------------
Outcome sparse_signal() {
  auto spec = desk_spec(8.0, 202);
  spec.knockoff = KnockoffMethod::CrSecond;
  spec.statistic = StatisticMethod::Lcd;
  spec.knockoff_forest.n_trees = 100;
  const auto t = Clock::now();
  const auto r = run_experiment(spec);
  const double secs = seconds_since(t);
  const auto& s = r.summary;
  const bool ok = s.failed == 0 && s.mean_fdp <= 0.2 + 2 * s.se_fdp && s.mean_power >= 0.5 && secs < 1800.0;
  return {ok, fmt("mean FDP %.4f (SE %.4f, bound %.4f), mean power %.4f, %d failed reps, %.0f s (target < 1800 s)",
                  s.mean_fdp, s.se_fdp, 0.2 + 2 * s.se_fdp, s.mean_power, s.failed, secs)};
}

// --- 3 ----------------------------------------------------------------------
Outcome power_ordering() {
  auto spec = desk_spec(8.0, 303);
  spec.outcome = OutcomeKind::Nonlinear;
  spec.knockoff = KnockoffMethod::CrSecond;
  spec.knockoff_forest.n_trees = 100;
  spec.statistic_forest.n_trees = 100;
  spec.n_reps = 50;
  spec.statistic = StatisticMethod::MaldForest;
  const auto mald = run_experiment(spec);
  spec.statistic = StatisticMethod::Lcd;
  const auto lcd = run_experiment(spec);
  // Same seeds give the same data and knockoffs per replicate: paired differences.
  std::vector<double> d;
  for (std::size_t r = 0; r < mald.replicates.size(); ++r)
    if (mald.replicates[r].error.empty() && lcd.replicates[r].error.empty())
      d.push_back(mald.replicates[r].power - lcd.replicates[r].power);
  double mean = 0, var = 0;
  for (double v : d) mean += v / static_cast<double>(d.size());
  for (double v : d) var += (v - mean) * (v - mean) / static_cast<double>(d.size() - 1);
  const double se = std::sqrt(var / static_cast<double>(d.size()));
  const bool ok = d.size() == 50 && mean >= 2 * se && mean > 0;
  return {ok, fmt("power MALD-forest %.4f vs LCD %.4f; paired difference %.4f, SE %.4f (need >= %.4f); FDR %.3f vs %.3f",
                  mald.summary.mean_power, lcd.summary.mean_power, mean, se, 2 * se, mald.summary.mean_fdp,
                  lcd.summary.mean_fdp)};
}

// --- 4 ----------------------------------------------------------------------
Outcome residual_oracle() {
  Eigen::MatrixXd sigma(2, 2);
  sigma << 1, 0.5, 0.5, 1;
  Eigen::MatrixXd a(2, 2);
  a << 1, -0.5, -0.5, 1;
  const Eigen::MatrixXd oracle = a * sigma * a.transpose();
  Rng rng(404);
  const auto x = MixedDataset::numeric(gaussian(4000, sigma, rng));
  ResidualOptions o;
  o.model = ConditionalModel::Linear;
  const auto fit = fit_conditional_residuals(x, {}, o);
  const Eigen::MatrixXd cov = linalg::sample_covariance(fit.residuals.values);
  const double err = (cov - oracle).cwiseAbs().maxCoeff();
  return {err <= 0.05, fmt("cov [[%.4f, %.4f], [%.4f, %.4f]] vs [[0.75, -0.375], [-0.375, 0.75]], max error %.4f", cov(0, 0),
                           cov(0, 1), cov(1, 0), cov(1, 1), err)};
}

// --- 5 ----------------------------------------------------------------------
Outcome exchangeability() {
  Rng rng(505);
  double worst = 0;
  const int p = 10;
  for (double rho : {0.0, 0.5}) {
    const auto x = MixedDataset::numeric(gaussian(5000, ar1(p, rho), rng));
    const auto xt = second_order_knockoffs(x, rng());
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<int> s;
      for (int j = 0; j < p; ++j)
        if (std::bernoulli_distribution(0.5)(rng)) s.push_back(j);
      worst = std::max(worst, exchangeability_diagnostic(x, xt, s, 2).covariance_difference);
    }
  }
  return {worst < 0.08, fmt("max covariance discrepancy %.4f over 40 swap sets (limit 0.08)", worst)};
}

// --- 6 ----------------------------------------------------------------------
Outcome equicorrelated() {
  const Eigen::VectorXd si = solve_equicorrelated_s(Eigen::MatrixXd::Identity(4, 4));
  Eigen::MatrixXd two(2, 2);
  two << 1, 0.75, 0.75, 1;
  const Eigen::VectorXd s2 = solve_equicorrelated_s(two);
  const double e_id = (si.array() - 1.0).abs().maxCoeff();
  const double e_two = (s2.array() - 0.5).abs().maxCoeff();
  Rng rng(606);
  std::normal_distribution<double> g;
  double min_eig = 1e300;
  for (int trial = 0; trial < 100; ++trial) {
    const int p = 2 + trial % 15;
    const int n = trial % 3 == 0 ? p - 1 : p + 5;  // some singular matrices
    Eigen::MatrixXd a(n, p);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) a(i, j) = g(rng);
    Eigen::MatrixXd sigma = a.transpose() * a / n + 1e-3 * Eigen::MatrixXd::Identity(p, p);
    const Eigen::VectorXd s = solve_equicorrelated_s(sigma);
    min_eig = std::min(min_eig, linalg::min_eigenvalue(2 * sigma - Eigen::MatrixXd(s.asDiagonal())));
  }
  const bool ok = e_id <= 1e-12 && e_two <= 1e-12 && min_eig >= -1e-8;
  return {ok, fmt("|s - 1| = %.2e for I, |s - 0.5| = %.2e for rho 0.75, min eigenvalue %.3e over 100 matrices", e_id, e_two,
                  min_eig)};
}

// --- 7 ----------------------------------------------------------------------
Outcome lasso_correctness() {
  Rng rng(707);
  std::normal_distribution<double> g;
  double worst_kkt = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 40 + 3 * trial, p = 5 + trial % 30;
    Eigen::MatrixXd x(n, p);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) x(i, j) = g(rng);
    x.col(p - 1) = 0.9 * x.col(0) + 0.1 * x.col(p - 1);  // a correlated pair
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y[i] = 2 * x(i, 0) - x(i, 1) + g(rng);
    const LassoFit fit = lasso_path(x, y);
    const LassoProblem prob(x, y);
    for (Eigen::Index k = 0; k < fit.lambda_grid.size(); ++k)
      worst_kkt = std::max(worst_kkt, prob.kkt_violation(fit.coefficients(k), fit.lambda_grid[k]));
  }
  // Orthonormal design: +-1 factorial columns have Z^T Z / n = I.
  const int n = 32, p = 5;
  Eigen::MatrixXd x(n, p);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < p; ++k) x(i, k) = (i >> k) & 1 ? 1 : -1;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = 1.5 * x(i, 0) - 0.8 * x(i, 2) + 0.3 * g(rng);
  const LassoProblem prob(x, y);
  const Eigen::VectorXd zy = prob.standardized().transpose() * prob.centered_response() / n;
  double worst_soft = 0;
  for (double lambda : {0.0, 0.01, 0.1, 0.5, 1.0, 2.0}) {
    const Eigen::VectorXd b = prob.solve(lambda);
    for (int k = 0; k < p; ++k) {
      const double z = zy[k];
      const double soft = std::copysign(std::max(std::abs(z) - lambda, 0.0), z);
      worst_soft = std::max(worst_soft, std::abs(b[k] - soft));
    }
  }
  const bool ok = worst_kkt <= 1e-6 && worst_soft <= 1e-6;
  return {ok, fmt("max KKT residual %.3e over 50 paths (limit 1e-6); soft-threshold error %.3e (limit 1e-6)", worst_kkt,
                  worst_soft)};
}

// --- 8 ----------------------------------------------------------------------
Outcome mald_reductions() {
  Rng rng(808);
  std::normal_distribution<double> g;
  const int n = 50, p = 4;
  const auto x = MixedDataset::numeric(gaussian(n, Eigen::MatrixXd::Identity(p, p), rng));
  const auto xt = MixedDataset::numeric(gaussian(n, Eigen::MatrixXd::Identity(p, p), rng));
  Eigen::VectorXd coef(2 * p);
  for (int k = 0; k < 2 * p; ++k) coef[k] = g(rng);
  const LinearOutcomeModel model(coef, 0.7);
  double worst_oracle = 0;
  for (double r : {0.5, 1.0, 2.0})
    for (double b : {1e-4, 1e-2, 0.5, 3.0})
      for (int j = 0; j < p; ++j) {
        const auto s = mald_numeric(model, x, xt, j, b, r, false);
        worst_oracle = std::max({worst_oracle, std::abs(s.original - std::pow(std::abs(coef[j]), r)),
                                 std::abs(s.knockoff - std::pow(std::abs(coef[p + j]), r))});
      }

  // Trained network, then backprop gradients vs central differences.
  Eigen::MatrixXd design(200, 3);
  Eigen::VectorXd y(200);
  for (int i = 0; i < 200; ++i) {
    for (int j = 0; j < 3; ++j) design(i, j) = g(rng);
    y[i] = std::sin(design(i, 0)) + design(i, 1) * design(i, 2);
  }
  MlpConfig cfg;
  cfg.hidden = {16, 16};
  cfg.epochs = 100;
  cfg.seed = 809;
  const Mlp mlp = fit_mlp(y, design, cfg);
  Eigen::MatrixXd pts(20, 3);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 3; ++j) pts(i, j) = g(rng);
  const Eigen::MatrixXd grad = mlp.input_gradients(pts);
  double worst_rel = 0;
  const double h = 1e-5;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 3; ++j) {
      Eigen::VectorXd up = pts.row(i).transpose(), down = up;
      up[j] += h;
      down[j] -= h;
      const double fd = (mlp.predict(std::span<const double>(up.data(), 3)) - mlp.predict(std::span<const double>(down.data(), 3))) / (2 * h);
      worst_rel = std::max(worst_rel, std::abs(grad(i, j) - fd) / std::max(std::abs(fd), 1e-8));
    }
  const bool ok = worst_oracle <= 1e-9 && worst_rel <= 1e-5;
  return {ok, fmt("linear oracle |T - |beta|^r| max %.2e; MLP gradient relative error max %.2e at 20 points (limit 1e-5)",
                  worst_oracle, worst_rel)};
}

// --- 9 ----------------------------------------------------------------------
Outcome antisymmetry() {
  Rng rng(909);
  std::normal_distribution<double> g;
  const int n = 80;
  const std::vector<ColumnSchema> schema{ColumnSchema::numeric("a"), ColumnSchema::numeric("b"),
                                         ColumnSchema::numeric("c"), ColumnSchema::categorical("d", 3)};
  auto draw = [&] {
    Eigen::MatrixXd v(n, 4);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 3; ++j) v(i, j) = g(rng);
      v(i, 3) = 1 + static_cast<int>(rng() % 3);
    }
    return MixedDataset(v, schema);
  };
  using StatFn = std::function<Eigen::VectorXd(const MixedDataset&, const MixedDataset&, const Eigen::VectorXd&, std::uint64_t)>;
  const std::vector<std::pair<std::string, StatFn>> stats = {
      {"lcd", [](auto& a, auto& b, auto& y, auto s) { LassoStatOptions o; o.seed = s; return lcd_statistics(a, b, y, o).w; }},
      {"lasso-max", [](auto& a, auto& b, auto& y, auto) { return lasso_max_statistics(a, b, y).w; }},
      {"mald-forest", [](auto& a, auto& b, auto& y, auto s) {
         MaldOptions o; o.forest.n_trees = 30; o.seed = s; return mald_statistics(y, a, b, o).w; }},
      {"mald-mlp", [](auto& a, auto& b, auto& y, auto s) {
         MaldOptions o; o.backend = MaldBackend::Mlp; o.mlp.hidden = {8}; o.mlp.epochs = 60; o.seed = s;
         return mald_statistics(y, a, b, o).w; }},
      {"gini", [](auto& a, auto& b, auto& y, auto s) {
         ForestParams f; f.n_trees = 30; f.seed = s; return gini_statistics(y, a, b, f).w; }},
  };
  std::string detail;
  bool all = true;
  for (const auto& [name, stat] : stats) {
    int flips = 0, nonzero = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const MixedDataset x = draw(), xt = draw();
      Eigen::VectorXd y(n);
      for (int i = 0; i < n; ++i) y[i] = 2 * x(i, 0) + (x(i, 3) == 2 ? 1.5 : 0.0) + 0.5 * g(rng);
      const int j = trial % 4;
      Eigen::MatrixXd a = x.values(), b = xt.values();
      a.col(j).swap(b.col(j));
      const std::uint64_t seed = rng();
      const Eigen::VectorXd w = stat(x, xt, y, seed);
      const Eigen::VectorXd ws = stat(x.with_values(a), xt.with_values(b), y, seed);
      bool ok = ws[j] == -w[j];
      for (int k = 0; k < 4; ++k)
        if (k != j) ok = ok && ws[k] == w[k];
      flips += ok;
      nonzero += w[j] != 0.0;
    }
    all = all && flips == 20;
    detail += fmt("%s %d/20 (nonzero %d) ", name.c_str(), flips, nonzero);
  }
  return {all, detail + "exact sign flips"};
}

// --- 10 ---------------------------------------------------------------------
Outcome filter_oracles() {
  const std::vector<double> w1{5, 4, 3, 2, 1, -1};
  const auto a = select_features(w1, 0.5, 1);
  const std::vector<double> w2{3, 2, -1, 1, -2};
  const auto b = select_features(w2, 0.5, 1);
  const bool ok = a.threshold == 1.0 && a.selected == std::vector<int>{0, 1, 2, 3, 4} && b.selected.empty();
  return {ok, fmt("case 1: threshold %g, %zu selected; case 2: %zu selected", a.threshold, a.selected.size(), b.selected.size())};
}

// --- 11 ---------------------------------------------------------------------
Outcome age() {
  const double f094 = age_transform(0.94);
  const double f12 = age_transform(1.2);
  const double left = std::log(1.2 + 0.06), right = (1.2 - 1.2) / 1.26 + std::log(1.26);
  bool mono = true;
  double last = age_transform(0.0);
  for (int i = 1; i < 10000; ++i) {
    const double v = age_transform(i * 5e-4);
    mono = mono && v > last;
    last = v;
  }
  const bool ok = std::abs(f094) <= 1e-12 && std::abs(f12 - std::log(1.26)) <= 1e-12 &&
                  std::abs(left - std::log(1.26)) <= 1e-12 && std::abs(right - std::log(1.26)) <= 1e-12 && mono;
  return {ok, fmt("f(0.94) = %.3e, f(1.2) - log(1.26) = %.3e, branch gap %.3e, monotone on 10^4 points: %s", f094,
                  f12 - std::log(1.26), left - right, mono ? "yes" : "no")};
}

// --- 12 ---------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "crk_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SimConfig c = SimConfig::desk(200, 32, 1212);
  const auto cov = gen_mixture_covariates(c);
  const Eigen::VectorXd y = linear_outcome(cov.data, 4.0, 1213);
  {
    std::ofstream d(dir / "data.csv"), r(dir / "y.csv");
    d.precision(17);
    r.precision(17);
    for (int j = 0; j < cov.data.cols(); ++j) d << (j ? "," : "") << cov.data.column(j).name;
    d << "\n";
    for (int i = 0; i < cov.data.rows(); ++i) {
      for (int j = 0; j < cov.data.cols(); ++j) {
        d << (j ? "," : "");
        if (cov.data.is_categorical(j)) d << "L" << static_cast<int>(cov.data(i, j));
        else d << cov.data(i, j);
      }
      d << "\n";
    }
    r << "y\n";
    for (int i = 0; i < y.size(); ++i) r << y[i] << "\n";
  }
  const std::vector<std::pair<std::string, std::string>> runs = {{"1", "a"}, {"1", "b"}, {"4", "c"}};
  std::string detail;
  bool ok = true;
  for (const std::string stat : {"lcd", "mald-forest"}) {
    for (const auto& [threads, tag] : runs) {
      const std::string cmd = std::string(CRK_CLI_PATH) + " --threads " + threads + " pipeline --data " +
                              (dir / "data.csv").string() + " --response " + (dir / "y.csv").string() +
                              " --seed 42 --trees 50 --statistic " + stat + " --out-dir " +
                              (dir / (stat + tag)).string() + " 2>&1";
      const int status = std::system(cmd.c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        ok = false;
        detail += stat + " run " + tag + " failed; ";
      }
    }
    for (const char* f : {"knockoffs.csv", "w.csv", "selection.csv"}) {
      const std::string a = slurp(dir / (stat + "a") / f);
      const bool same = !a.empty() && a == slurp(dir / (stat + "b") / f) && a == slurp(dir / (stat + "c") / f);
      ok = ok && same;
      if (!same) detail += stat + "/" + f + " differs; ";
    }
  }
  fs::remove_all(dir);
  return {ok, detail.empty() ? "pipeline (lcd, mald-forest): knockoffs, W and selection bit-identical across 2 runs and threads {1, 4}"
                             : detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"FDR control under the global null (second-order + LCD)", global_null},
      {"FDR control and power with sparse signal (CR-second + LCD)", sparse_signal},
      {"Power ordering on the nonlinear outcome (MALD-forest vs LCD)", power_ordering},
      {"Gaussian residual covariance oracle", residual_oracle},
      {"Exchangeability of second-order knockoffs", exchangeability},
      {"Equi-correlated s", equicorrelated},
      {"Lasso KKT and soft-threshold", lasso_correctness},
      {"MALD linear oracle and MLP gradients", mald_reductions},
      {"Statistic antisymmetry", antisymmetry},
      {"Knockoff filter hand oracles", filter_oracles},
      {"Age transform", age},
      {"Pipeline reproducibility", reproducibility},
  };
  std::set<int> only;
  for (int a = 1; a < argc; ++a) only.insert(std::atoi(argv[a]));
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t = Clock::now();
    Outcome o{false, ""};
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[k].first << ": " << o.detail
              << fmt(" (%.1f s)", seconds_since(t)) << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
