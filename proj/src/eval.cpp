#include "crk/eval.hpp"

#include "crk/errors.hpp"
#include "crk/lasso.hpp"
#include "crk/parallel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace crk {

double age_transform(double age) {
  if (!std::isfinite(age) || age < 0.0) throw std::invalid_argument("age must be finite and >= 0");
  if (age < 1.2) return std::log(age + 0.06);
  return (age - 1.2) / 1.26 + std::log(1.26);
}

namespace {

// Least squares with intercept column; ridge fallback when rank deficient.
Eigen::VectorXd ols(const Eigen::MatrixXd& a, const Eigen::VectorXd& y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() == a.cols()) return qr.solve(y);
  Eigen::MatrixXd g = a.transpose() * a;
  g.diagonal().array() += 1e-8;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(g);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericalError("OLS training fold is rank deficient even with ridge fallback");
  Eigen::VectorXd b = ldlt.solve(a.transpose() * y);
  if (!b.allFinite()) throw NumericalError("OLS training fold is rank deficient even with ridge fallback");
  return b;
}

}  // namespace

CvReport cv_ols_mse(const MixedDataset& x, std::span<const int> selected, const Eigen::VectorXd& y, int k,
                    std::uint64_t seed) {
  if (y.size() != x.rows()) throw std::invalid_argument("response length differs from the number of rows");
  if (k < 2) throw std::invalid_argument("cross-validation needs k >= 2");
  if (k > x.rows()) throw std::invalid_argument("more folds than rows");
  if (!y.allFinite()) throw DataError("response contains non-finite values");
  for (int j : selected)
    if (j < 0 || j >= x.cols()) throw std::out_of_range("selected column " + std::to_string(j) + " out of range");

  const std::vector<int> cols(selected.begin(), selected.end());
  Eigen::MatrixXd design(x.rows(), 1);
  design.setOnes();
  if (!cols.empty()) {
    const OneHotDesign enc = one_hot(x.select_columns(cols), true);
    Eigen::MatrixXd d(x.rows(), 1 + enc.matrix.cols());
    d << Eigen::VectorXd::Ones(x.rows()), enc.matrix;
    design = std::move(d);
  }
  const auto n = static_cast<double>(x.rows());
  if (static_cast<double>(design.cols()) >= n * (k - 1) / k)
    throw std::invalid_argument("too many selected columns for OLS on a training fold");

  const auto fold = fold_assignment(x.rows(), k, seed);
  CvReport report;
  report.k = k;
  report.selected = cols;
  report.fold_mses.assign(static_cast<std::size_t>(k), 0.0);
  parallel_for(static_cast<std::size_t>(k), [&](std::size_t f) {
    std::vector<Eigen::Index> train, test;
    for (std::size_t i = 0; i < fold.size(); ++i)
      (fold[i] == static_cast<int>(f) ? test : train).push_back(static_cast<Eigen::Index>(i));
    const Eigen::VectorXd b = ols(design(train, Eigen::all), y(train));
    report.fold_mses[f] = (design(test, Eigen::all) * b - y(test)).squaredNorm() / static_cast<double>(test.size());
  });
  double sum = 0.0;
  for (double m : report.fold_mses) sum += m;
  report.mean_mse = sum / k;
  return report;
}

}  // namespace crk
