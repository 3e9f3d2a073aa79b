#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace crk {

/// Lasso  min_b (1/2n)||y - Z b||^2 + lambda ||b||_1  on standardized
/// features Z (mean 0, unit 1/n variance; constant columns stay at zero) and
/// centered y. Solved by covariance-update coordinate descent with an active
/// set, finished by an exact solve on the active set when the signs agree.
/// Stops when the duality gap is below gap_tolerance * ||y||^2 / 2n and the
/// KKT conditions hold to kkt_tolerance * max(1, sd(y)).
class LassoProblem {
 public:
  struct Options {
    double gap_tolerance = 1e-7;
    double kkt_tolerance = 1e-8;
    int max_iterations = 100000;
  };

  LassoProblem(const Eigen::MatrixXd& features, const Eigen::VectorXd& y, Options options);
  LassoProblem(const Eigen::MatrixXd& features, const Eigen::VectorXd& y);

  Eigen::Index rows() const { return z_.rows(); }
  Eigen::Index cols() const { return z_.cols(); }
  const Eigen::MatrixXd& standardized() const { return z_; }
  const Eigen::VectorXd& centered_response() const { return yc_; }
  const Eigen::VectorXd& means() const { return mean_; }
  const Eigen::VectorXd& scales() const { return scale_; }
  double response_mean() const { return y_mean_; }

  /// Smallest lambda with an all-zero solution: max_k |z_k^T y| / n.
  double lambda_max() const;

  /// Solution on the standardized scale, warm-started from `warm` (size cols()).
  Eigen::VectorXd solve(double lambda, const Eigen::VectorXd& warm) const;
  Eigen::VectorXd solve(double lambda) const;

  /// max_k of the KKT residual at beta.
  double kkt_violation(const Eigen::VectorXd& beta, double lambda) const;
  double duality_gap(const Eigen::VectorXd& beta, double lambda) const;

 private:
  bool converged(const Eigen::VectorXd& beta, double lambda) const;

  Eigen::MatrixXd z_;
  Eigen::MatrixXd gram_;  // Z^T Z / n
  Eigen::VectorXd zty_;   // Z^T y / n
  Eigen::VectorXd yc_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
  double y_mean_ = 0.0;
  Options options_;
};

struct LassoFit {
  Eigen::VectorXd lambda_grid;  // strictly decreasing
  Eigen::MatrixXd coef_path;    // grid length x p, standardized scale
  Eigen::VectorXd intercept;    // per grid point, original scale
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;
  Eigen::VectorXd cv_error;     // mean held-out MSE per grid point (cross-validated fits only)
  Eigen::Index chosen_index = 0;
  double chosen_lambda = 0.0;

  Eigen::VectorXd coefficients(Eigen::Index grid_index) const { return coef_path.row(grid_index).transpose(); }
  Eigen::VectorXd chosen_coefficients() const { return coefficients(chosen_index); }
  /// Coefficients for the unstandardized features.
  Eigen::VectorXd original_scale_coefficients(Eigen::Index grid_index) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& features, Eigen::Index grid_index) const;
};

/// Log-spaced grid from lambda_max down to ratio * lambda_max.
Eigen::VectorXd default_lambda_grid(const LassoProblem& problem, int length = 100, double ratio = 1e-3);

/// Warm-started path over the grid (empty grid: default_lambda_grid). The
/// chosen point of a plain path is its last (smallest) lambda.
LassoFit lasso_path(const Eigen::MatrixXd& features, const Eigen::VectorXd& y, std::span<const double> lambda_grid = {});

/// K-fold cross-validation over the full-data grid; chosen_lambda minimises
/// mean held-out squared error (ties go to the larger lambda). Folds come
/// from a seeded permutation of the rows. Throws std::invalid_argument if
/// n_folds < 2 or n < n_folds.
LassoFit lasso_cv(const Eigen::MatrixXd& features, const Eigen::VectorXd& y, int n_folds, std::uint64_t seed,
                  std::span<const double> lambda_grid = {});

/// Seeded equal split of n rows into k folds (sizes differ by at most 1).
std::vector<int> fold_assignment(Eigen::Index n, int k, std::uint64_t seed);

}  // namespace crk
