#pragma once

#include "crk/data.hpp"
#include "crk/forest.hpp"
#include "crk/importance.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace crk {

struct SimConfig {
  int n = 1024;
  int p = 128;
  int n_numeric = 96;
  int n_cat2 = 16;
  int n_cat3 = 16;
  double beta = 1.0;
  int modes = 5;
  double rho = 0.5;
  double mode_delta = 3.0;  // mode means are +-mode_delta
  std::uint64_t seed = 0;

  /// p columns split 3/4 numeric, 1/8 two-level, 1/8 three-level.
  static SimConfig desk(int n, int p, std::uint64_t seed);
};

/// Throws std::invalid_argument for inconsistent configs.
void validate_config(const SimConfig& config);

struct Covariates {
  MixedDataset data;
  std::vector<int> mode;  // 0-based mode label per row
};

/// modes x p matrix of latent means, +-mode_delta on a sign pattern drawn
/// from config.seed.
Eigen::MatrixXd mode_means(const SimConfig& config);

/// Mixture-of-Gaussians covariates: mode drawn uniformly per row, latent
/// AR(1) Gaussian around that mode's mean, categorical columns cut at the
/// mixture quantiles of their latent coordinate into K equal-mass bins.
/// Columns are laid out numeric, then two-level, then three-level.
Covariates gen_mixture_covariates(const SimConfig& config);
Covariates gen_mixture_covariates(const SimConfig& config, const Eigen::MatrixXd& means, std::uint64_t draw_seed);

/// Cut points splitting an equal-weight mixture of N(mu_k, 1) into K
/// equal-probability bins.
std::vector<double> mixture_quantile_cuts(std::span<const double> component_means, int levels);

// ---------------------------------------------------------------------------
// Outcomes
// ---------------------------------------------------------------------------

/// Unit-variance nonlinear transforms (Cauchy, Log, Square, Sin, Cos,
/// SquareRoot, Linear).
const std::vector<std::pair<std::string, std::function<double(double)>>>& nonlinear_function_registry();

/// Throws std::invalid_argument for an unknown name.
double apply_nonlinear(const std::string& name, double x);

enum class OutcomeKind { Linear, Nonlinear, Custom };

struct NumericTerm {
  int column = 0;
  std::string function = "Linear";
  double coefficient = 1.0;
};

/// coefficient * (x_a x_b + weight_a x_a + weight_b x_b)
struct InteractionTerm {
  int a = 0;
  int b = 0;
  double weight_a = 0.25;
  double weight_b = 0.25;
  double coefficient = 1.0;
};

/// sum_k level_coefficients[k-1] * I(x = k)
struct CategoricalTerm {
  int column = 0;
  std::vector<double> level_coefficients;
};

/// y = beta * (sum of terms) + eps, eps ~ N(0, 1).
struct OutcomeSpec {
  OutcomeKind kind = OutcomeKind::Custom;
  std::vector<NumericTerm> numeric;
  std::vector<InteractionTerm> interactions;
  std::vector<CategoricalTerm> categorical;

  std::vector<int> active_columns() const;
};

/// Active columns of the reference design (0-based), remapped proportionally
/// onto smaller or larger blocks.
struct ActiveLayout {
  std::vector<int> numeric;  // 5 columns
  std::vector<int> cat2;     // 2 columns
  std::vector<int> cat3;     // 3 columns
};

ActiveLayout active_layout(int n_numeric, int n_cat2, int n_cat3);

OutcomeSpec linear_spec(const ActiveLayout& layout);
OutcomeSpec nonlinear_spec(const ActiveLayout& layout);

/// Block sizes of a dataset laid out numeric / two-level / three-level.
/// Throws DataError if the columns are not in that layout.
ActiveLayout layout_of(const MixedDataset& x);

/// Noise-free part sum of terms times beta, on raw values. Level codes
/// outside 1..K contribute nothing.
Eigen::VectorXd outcome_signal(const OutcomeSpec& spec, const Eigen::MatrixXd& values, double beta);

Eigen::VectorXd generate_outcome(const OutcomeSpec& spec, const MixedDataset& x, double beta, std::uint64_t seed);
Eigen::VectorXd linear_outcome(const MixedDataset& x, double beta, std::uint64_t seed);
Eigen::VectorXd nonlinear_outcome(const MixedDataset& x, double beta, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Experiment loop
// ---------------------------------------------------------------------------

enum class KnockoffMethod { SecondOrder, CrSecond, CrPermute, ScipPermute, ScipSecond };
enum class StatisticMethod { Lcd, LassoMax, MaldForest, MaldMlp, Gini };

std::string to_string(KnockoffMethod m);
std::string to_string(StatisticMethod m);
/// Throw std::invalid_argument for unknown names.
KnockoffMethod parse_knockoff_method(const std::string& name);
StatisticMethod parse_statistic_method(const std::string& name);

struct ExperimentSpec {
  SimConfig config;
  OutcomeKind outcome = OutcomeKind::Linear;
  OutcomeSpec custom;  // used when outcome == Custom
  KnockoffMethod knockoff = KnockoffMethod::SecondOrder;
  StatisticMethod statistic = StatisticMethod::Lcd;
  double q = 0.2;
  int offset = 1;
  int n_reps = 100;
  ForestParams knockoff_forest;   // seed derived per replicate
  ForestParams statistic_forest;  // seed derived per replicate
  MlpConfig mlp;
  int lasso_folds = 5;
  bool record_time = true;
};

struct ReplicateResult {
  int rep = 0;
  std::string method;
  std::string statistic;
  double q = 0.0;
  double fdp = 0.0;
  double power = 0.0;
  int n_selected = 0;
  double seconds = 0.0;
  std::string error;  // non-empty when the replicate failed
};

struct ExperimentSummary {
  int completed = 0;
  int failed = 0;
  double mean_fdp = 0.0;
  double se_fdp = 0.0;
  double mean_power = 0.0;
  double se_power = 0.0;
};

struct ExperimentResult {
  std::vector<ReplicateResult> replicates;
  ExperimentSummary summary;
};

/// Covariates -> outcome -> knockoffs -> W -> selection -> evaluation, once
/// per replicate. Replicate r draws everything from (seed, r), so results do
/// not depend on scheduling. Failures are recorded per replicate.
ExperimentResult run_experiment(const ExperimentSpec& spec);

/// One replicate's statistic on given data (exposed for tests and the CLI).
WStatistics compute_statistic(StatisticMethod method, const MixedDataset& x, const MixedDataset& xt,
                              const Eigen::VectorXd& y, const ExperimentSpec& spec, std::uint64_t seed);
KnockoffMatrix generate_knockoffs(KnockoffMethod method, const MixedDataset& x, const ForestParams& forest,
                                  std::uint64_t seed);

ExperimentSummary summarize(const std::vector<ReplicateResult>& replicates);

}  // namespace crk
