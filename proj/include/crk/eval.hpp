#pragma once

#include "crk/data.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace crk {

/// log(a + 0.06) for a < 1.2, (a - 1.2) / 1.26 + log(1.26) otherwise.
/// Throws std::invalid_argument for negative or non-finite ages.
double age_transform(double age);

struct CvReport {
  std::vector<double> fold_mses;
  double mean_mse = 0.0;
  std::vector<int> selected;
  int k = 0;
};

/// k-fold cross-validated MSE of an OLS fit (with intercept) on the selected
/// columns. Categorical columns enter one-hot with the first level dropped.
/// Rank-deficient training folds get a 1e-8 ridge; throws NumericalError if
/// that still fails. Throws std::invalid_argument when k < 2, k > n or the
/// selection cannot be fit on a training fold.
CvReport cv_ols_mse(const MixedDataset& x, std::span<const int> selected, const Eigen::VectorXd& y, int k,
                    std::uint64_t seed);

}  // namespace crk
