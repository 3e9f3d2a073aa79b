#pragma once

#include "crk/data.hpp"
#include "crk/forest.hpp"
#include "crk/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace crk {

// ---------------------------------------------------------------------------
// Second-order (Gaussian) knockoffs
// ---------------------------------------------------------------------------

/// Chooses the diagonal s of the joint covariance
///   G = [[S, S - diag(s)], [S - diag(s), S]].
/// Any solver must return s >= 0 with 2S - diag(s) PSD.
using SSolver = std::function<Eigen::VectorXd(const Eigen::MatrixXd& sigma)>;

/// Equi-correlated closed form: s_j = min(1, 2 * lambda_min(C)) * S_jj where
/// C is the correlation matrix of S. Throws std::invalid_argument for a
/// non-symmetric input and NumericalError when lambda_min(C) < -1e-8.
Eigen::VectorXd solve_equicorrelated_s(const Eigen::MatrixXd& sigma);

/// Everything needed to sample X~ | X from the Gaussian law implied by G:
///   mean X - (X - mu) S^-1 D,  covariance 2D - D S^-1 D.
struct SecondOrderModel {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  Eigen::VectorXd s;
  Eigen::MatrixXd conditional_factor;  // S^-1 D
  Eigen::MatrixXd residual_factor;     // L with L L^T = 2D - D S^-1 D
  double shrinkage = 0.0;              // covariance shrinkage intensity used (0 = none)
};

/// Builds the sampling factors for given moments and diagonal. Throws
/// NumericalError if sigma is singular.
SecondOrderModel make_second_order_model(Eigen::VectorXd mu, Eigen::MatrixXd sigma, Eigen::VectorXd s);

/// Estimates mu and S from rows of x (shrunk toward the diagonal when
/// n < 2p) and solves for s.
SecondOrderModel fit_second_order(const Eigen::MatrixXd& x, const SSolver& solver = solve_equicorrelated_s);

Eigen::MatrixXd sample_second_order(const SecondOrderModel& model, const Eigen::MatrixXd& x, Rng& rng);

/// Second-order knockoffs for an all-numeric dataset.
KnockoffMatrix second_order_knockoffs(const MixedDataset& x, std::uint64_t seed,
                                      const SSolver& solver = solve_equicorrelated_s);

/// Second-order baseline for mixed data: level codes are treated as numbers
/// for the Gaussian draw and categorical knockoffs are rounded and clamped
/// back to 1..K. Approximate by construction; used as the comparison baseline
/// in simulations.
KnockoffMatrix second_order_knockoffs_mixed(const MixedDataset& x, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Conditional-residual and sequential forest knockoffs
// ---------------------------------------------------------------------------

/// The residual knockoff generator C.
struct ResidualKnockoffGenerator {
  enum class Kind { SecondOrderOnResiduals, PermuteResiduals };
  Kind kind = Kind::SecondOrderOnResiduals;
  std::uint64_t seed = 0;
};

/// Estimator used for the conditional means g_j.
enum class ConditionalModel { Forest, Linear };

struct ResidualOptions {
  ConditionalModel model = ConditionalModel::Forest;
  /// Forest residuals from out-of-bag predictions (true) or in-sample
  /// predictions (false).
  bool out_of_bag = true;
};

/// First stage of the conditional-residual construction.
struct ConditionalFit {
  Eigen::MatrixXd predicted;  // X^ for numeric columns, 0 for categorical (the U matrix)
  ResidualMatrix residuals;   // X - X^ for numeric columns, 0 for categorical
  /// Per column: n x K_j estimated P(X_ij = k | X_i,-j); empty for numeric columns.
  std::vector<Eigen::MatrixXd> class_probabilities;
  /// Rows that fell back to full-forest predictions, summed over columns.
  int oob_fallbacks = 0;
};

/// Fits g_j for every column on the remaining columns. The forest for column
/// j is seeded from (params.seed, j). A column with no other columns to
/// condition on uses the sample mean (numeric) or sample frequencies
/// (categorical). The linear model is ordinary least squares with an
/// intercept (categorical predictors one-hot encoded) and supports numeric
/// targets only.
ConditionalFit fit_conditional_residuals(const MixedDataset& x, const ForestParams& params,
                                         const ResidualOptions& options = {});

/// Conditional residual knockoffs: X~ = U + Gamma~ where Gamma~ = C(Gamma) on
/// the numeric columns and categorical knockoffs are drawn from the fitted
/// class probabilities.
KnockoffMatrix conditional_residual_knockoffs(const MixedDataset& x, const ForestParams& params,
                                              const ResidualKnockoffGenerator& generator,
                                              const ResidualOptions& options = {});

struct ScipOptions {
  /// Generation order (a permutation of 0..p-1); empty means 0..p-1.
  std::vector<int> order;
  bool out_of_bag = true;
};

/// Sequential conditionally independent forests: column j is modelled on
/// [X_-j, previously generated knockoffs].
KnockoffMatrix scip_forest_knockoffs(const MixedDataset& x, const ForestParams& params,
                                     const ResidualKnockoffGenerator& generator = {
                                         ResidualKnockoffGenerator::Kind::PermuteResiduals, 0},
                                     const ScipOptions& options = {});

/// A uniformly random permutation of the residual vector.
Eigen::VectorXd permute_residuals(std::span<const double> residuals, std::uint64_t seed);

/// Draws a level in 1..K from an unnormalised probability row.
int sample_level(std::span<const double> probabilities, Rng& rng);

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct ExchangeabilityReport {
  double mean_difference = 0.0;        // max |mean([X, X~]) - mean([X, X~]_swap(S))|
  double covariance_difference = 0.0;  // max |cov([X, X~]) - cov([X, X~]_swap(S))|
};

/// Moment-matching check of the swap property. n_moments = 1 compares means
/// only; 2 also compares covariances.
ExchangeabilityReport exchangeability_diagnostic(const MixedDataset& x, const KnockoffMatrix& xt,
                                                 std::span<const int> swap_set, int n_moments = 2);

}  // namespace crk
