#pragma once

#include "crk/data.hpp"
#include "crk/forest.hpp"
#include "crk/lasso.hpp"
#include "crk/mlp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace crk {

/// Knockoff statistics, one entry per original feature.
struct WStatistics {
  Eigen::VectorXd w;
  std::string method;
  std::vector<std::string> feature_names;
  std::uint64_t seed = 0;
  double bandwidth = 0.0;
  double exponent = 1.0;
};

/// How per-level coefficients of a one-hot encoded categorical feature are
/// reduced to one number.
enum class GroupReduction { Max, L2, SumAbs };

/// The augmented design [X, X~] with each (X_j, X~_j) pair placed in an order
/// that depends only on the unordered pair of column contents. Swapping X_j
/// with X~_j therefore yields a bit-identical design, and every statistic
/// built on it is exactly antisymmetric under the swap.
struct AugmentedDesign {
  MixedDataset data;          // 2p columns
  std::vector<int> original;  // data column holding X_j
  std::vector<int> knockoff;  // data column holding X~_j
};

AugmentedDesign augment(const MixedDataset& x, const MixedDataset& xt);

// ---------------------------------------------------------------------------
// Lasso statistics
// ---------------------------------------------------------------------------

struct LassoStatOptions {
  int n_folds = 5;
  std::uint64_t seed = 0;
  GroupReduction reduction = GroupReduction::Max;
  /// Skip cross-validation and use this penalty.
  std::optional<double> fixed_lambda;
};

/// Lasso coefficient difference: W_j = |T_j| - |T~_j| with T the (group
/// reduced) coefficient on the standardized one-hot design at the chosen
/// penalty.
WStatistics lcd_statistics(const MixedDataset& x, const MixedDataset& xt, const Eigen::VectorXd& y,
                           const LassoStatOptions& options = {});

struct LassoMaxOptions {
  GroupReduction reduction = GroupReduction::Max;
  int grid_length = 100;
  double relative_tolerance = 1e-4;
};

/// Entry penalty of each design column: the largest lambda with a nonzero
/// coefficient, located on the grid and refined by bisection. Columns that
/// never enter get 0.
Eigen::VectorXd lasso_entry_lambdas(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                    const LassoMaxOptions& options = {});

/// Lasso-Max: W_j = T_j - T~_j with T the entry penalty.
WStatistics lasso_max_statistics(const MixedDataset& x, const MixedDataset& xt, const Eigen::VectorXd& y,
                                 const LassoMaxOptions& options = {});

// ---------------------------------------------------------------------------
// MALD
// ---------------------------------------------------------------------------

/// A fitted outcome model g on rows laid out as [X_i, X~_i] (2p raw values,
/// categorical entries as level codes).
class OutcomeModel {
 public:
  virtual ~OutcomeModel() = default;
  virtual double predict(std::span<const double> row) const = 0;
  virtual bool has_gradient() const { return false; }
  /// rows x width matrix of dg/dx; only meaningful when has_gradient().
  virtual Eigen::MatrixXd gradients(const Eigen::MatrixXd& rows) const;
};

/// g(x) = intercept + coef . x, with exact gradients.
class LinearOutcomeModel final : public OutcomeModel {
 public:
  LinearOutcomeModel(Eigen::VectorXd coef, double intercept = 0.0);
  double predict(std::span<const double> row) const override;
  bool has_gradient() const override { return true; }
  Eigen::MatrixXd gradients(const Eigen::MatrixXd& rows) const override;

 private:
  Eigen::VectorXd coef_;
  double intercept_;
};

struct LocalScores {
  double original = 0.0;  // l_j
  double knockoff = 0.0;  // l~_j
};

/// l_j = mean_i |dg/dx_ij|^r: exact partials when `use_exact_gradient` and
/// the model provides them, else forward differences with bandwidth b.
/// Throws std::invalid_argument when b <= 0 is needed or r <= 0.
LocalScores mald_numeric(const OutcomeModel& model, const MixedDataset& x, const MixedDataset& xt, int j, double b,
                         double r, bool use_exact_gradient);

/// Level sweep: l_ij = max(G_ij u {0}) - min(G_ij u {0}) with G_ij the
/// predictions for every level of column j, then l_j = mean_i l_ij^r.
LocalScores mald_categorical(const OutcomeModel& model, const MixedDataset& x, const MixedDataset& xt, int j,
                             double r);

/// Same sweep on a single row's level predictions.
double categorical_local_score(std::span<const double> level_predictions);

enum class MaldBackend { Forest, Mlp };

struct MaldOptions {
  MaldBackend backend = MaldBackend::Forest;
  double bandwidth = 0.0;  // <= 0: n^(-1/5)
  double exponent = 1.0;
  ForestParams forest;     // seed is overridden by `seed`
  MlpConfig mlp;           // seed is overridden by `seed`
  std::uint64_t seed = 0;
};

/// Fits g on (y - mean(y), [X, X~]) and returns W_j = l_j - l~_j.
WStatistics mald_statistics(const Eigen::VectorXd& y, const MixedDataset& x, const MixedDataset& xt,
                            const MaldOptions& options = {});

/// The fitted model mald_statistics would use, exposed for inspection.
std::unique_ptr<OutcomeModel> fit_mald_model(const Eigen::VectorXd& y, const MixedDataset& x, const MixedDataset& xt,
                                             const MaldOptions& options);

// ---------------------------------------------------------------------------
// Gini baseline
// ---------------------------------------------------------------------------

/// Impurity-importance difference from a regression forest on the one-hot
/// augmented design; a feature's importance is summed over its levels.
WStatistics gini_statistics(const Eigen::VectorXd& y, const MixedDataset& x, const MixedDataset& xt,
                            const ForestParams& params);

}  // namespace crk
