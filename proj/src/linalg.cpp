#include "crk/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crk::linalg {

Eigen::VectorXd column_means(const Eigen::MatrixXd& x) { return x.colwise().mean().transpose(); }

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw std::invalid_argument("covariance needs at least 2 rows");
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
}

ShrunkCovariance shrink_to_diagonal(const Eigen::MatrixXd& x) {
  const auto n = static_cast<double>(x.rows());
  const auto p = x.cols();
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd s = (centered.transpose() * centered) / (n - 1.0);

  double var_sum = 0.0, sq_sum = 0.0;
  for (Eigen::Index a = 0; a < p; ++a) {
    for (Eigen::Index b = a + 1; b < p; ++b) {
      const Eigen::ArrayXd w = centered.col(a).array() * centered.col(b).array();
      const double wbar = w.mean();
      var_sum += n / std::pow(n - 1.0, 3) * (w - wbar).square().sum();
      sq_sum += s(a, b) * s(a, b);
    }
  }
  ShrunkCovariance out;
  out.intensity = sq_sum > 0 ? std::clamp(var_sum / sq_sum, 0.0, 1.0) : 1.0;
  out.covariance = s * (1.0 - out.intensity);
  out.covariance.diagonal() = s.diagonal();
  return out;
}

double min_eigenvalue(const Eigen::MatrixXd& symmetric) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetric, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

bool is_symmetric(const Eigen::MatrixXd& a, double tol) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

}  // namespace crk::linalg
