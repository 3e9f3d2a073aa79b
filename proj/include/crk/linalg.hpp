#pragma once

#include <Eigen/Dense>

namespace crk::linalg {

Eigen::VectorXd column_means(const Eigen::MatrixXd& x);

/// Unbiased (n - 1) sample covariance.
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x);

/// Ledoit-Wolf style shrinkage of the sample covariance toward its diagonal.
/// The intensity is the Schafer-Strimmer estimate of
/// sum Var(s_ij) / sum s_ij^2 over off-diagonal pairs, clipped to [0, 1].
struct ShrunkCovariance {
  Eigen::MatrixXd covariance;
  double intensity = 0.0;
};
ShrunkCovariance shrink_to_diagonal(const Eigen::MatrixXd& x);

double min_eigenvalue(const Eigen::MatrixXd& symmetric);

/// Symmetric square root factor L with L L^T = a, negative eigenvalues
/// (rounding noise on a PSD matrix) clipped to zero.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& a);

bool is_symmetric(const Eigen::MatrixXd& a, double tol);

}  // namespace crk::linalg
