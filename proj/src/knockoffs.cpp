#include "crk/knockoffs.hpp"

#include "crk/errors.hpp"
#include "crk/linalg.hpp"
#include "crk/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace crk {

namespace {

Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) z(i, j) = normal(rng);
  return z;
}

std::vector<int> all_but(int p, int skip) {
  std::vector<int> cols;
  for (int k = 0; k < p; ++k)
    if (k != skip) cols.push_back(k);
  return cols;
}

// In-sample OLS fit of target on [1, one_hot(features)].
Eigen::VectorXd ols_fitted(const MixedDataset& features, const Eigen::VectorXd& target) {
  const OneHotDesign design = one_hot(features, /*drop_first=*/true);
  Eigen::MatrixXd a(design.matrix.rows(), design.matrix.cols() + 1);
  a << Eigen::VectorXd::Ones(design.matrix.rows()), design.matrix;
  const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(target);
  return a * coef;
}

Eigen::MatrixXd level_frequencies(const Eigen::VectorXd& column, int levels) {
  Eigen::RowVectorXd freq = Eigen::RowVectorXd::Zero(levels);
  for (Eigen::Index i = 0; i < column.size(); ++i) freq[static_cast<Eigen::Index>(column[i]) - 1] += 1.0;
  freq /= static_cast<double>(column.size());
  return freq.replicate(column.size(), 1);
}

struct ColumnFit {
  Eigen::VectorXd predicted;  // numeric only
  Eigen::MatrixXd proba;      // categorical only
  int fallbacks = 0;
};

// Fits the conditional model of `target_col` (taken from `source`) on `features`.
ColumnFit fit_column(const MixedDataset& source, int target_col, const MixedDataset* features,
                     const ForestParams& params, std::uint64_t column_seed, ConditionalModel model, bool oob) {
  const Eigen::VectorXd target = source.values().col(target_col);
  const auto& schema = source.column(target_col);
  ColumnFit out;
  if (features == nullptr) {
    if (schema.is_categorical())
      out.proba = level_frequencies(target, schema.levels);
    else
      out.predicted = Eigen::VectorXd::Constant(target.size(), target.mean());
    return out;
  }
  if (model == ConditionalModel::Linear) {
    if (schema.is_categorical())
      throw std::invalid_argument("linear conditional model supports numeric columns only ('" + schema.name + "')");
    out.predicted = ols_fitted(*features, target);
    return out;
  }

  ForestParams p = params;
  p.seed = column_seed;
  const Task task = schema.is_categorical() ? Task::classification(schema.levels) : Task::regression();
  const Forest forest = fit_forest(*features, std::span<const double>(target.data(), target.size()), p, task);
  if (oob) {
    OobPrediction pred = forest.oob_predict(features->values());
    out.fallbacks = static_cast<int>(std::count(pred.fallback.begin(), pred.fallback.end(), true));
    if (task.is_classification())
      out.proba = std::move(pred.proba);
    else
      out.predicted = std::move(pred.value);
  } else if (task.is_classification()) {
    out.proba = forest.predict_proba(features->values());
  } else {
    out.predicted = forest.predict(features->values());
  }
  return out;
}

// Applies the residual generator to the columns of `residuals`.
Eigen::MatrixXd knockoff_residuals(const Eigen::MatrixXd& residuals, const ResidualKnockoffGenerator& gen,
                                   std::uint64_t stream_key) {
  if (residuals.cols() == 0) return residuals;
  if (gen.kind == ResidualKnockoffGenerator::Kind::PermuteResiduals) {
    Eigen::MatrixXd out(residuals.rows(), residuals.cols());
    for (Eigen::Index j = 0; j < residuals.cols(); ++j) {
      const Eigen::VectorXd col = residuals.col(j);
      out.col(j) = permute_residuals(std::span<const double>(col.data(), col.size()),
                                     derive_seed(gen.seed, {stream::kPermute, stream_key, static_cast<std::uint64_t>(j)}));
    }
    return out;
  }
  Rng rng = make_rng(gen.seed, {stream::kResidualKnockoff, stream_key});
  return sample_second_order(fit_second_order(residuals), residuals, rng);
}

}  // namespace

Eigen::VectorXd solve_equicorrelated_s(const Eigen::MatrixXd& sigma) {
  if (!linalg::is_symmetric(sigma, 1e-10)) throw std::invalid_argument("covariance matrix is not symmetric");
  const Eigen::VectorXd diag = sigma.diagonal();
  if ((diag.array() <= 0.0).any()) throw NumericalError("covariance has a non-positive diagonal entry");
  const Eigen::VectorXd inv_sd = diag.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd corr = inv_sd.asDiagonal() * sigma * inv_sd.asDiagonal();
  const double lambda_min = linalg::min_eigenvalue(corr);
  if (lambda_min < -1e-8) throw NumericalError("matrix is not positive semidefinite (min eigenvalue " +
                                               std::to_string(lambda_min) + ")");
  const double scale = std::min(1.0, 2.0 * std::max(lambda_min, 0.0));
  return scale * diag;
}

SecondOrderModel make_second_order_model(Eigen::VectorXd mu, Eigen::MatrixXd sigma, Eigen::VectorXd s) {
  const auto p = sigma.rows();
  if (sigma.cols() != p || mu.size() != p || s.size() != p) throw std::invalid_argument("second-order model shape mismatch");
  if ((s.array() < 0.0).any()) throw std::invalid_argument("s must be non-negative");

  Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma);
  const double scale = std::max(1.0, sigma.diagonal().maxCoeff());
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-12 * scale) {
    throw NumericalError("covariance matrix is singular");
  }
  SecondOrderModel m;
  const Eigen::MatrixXd d = s.asDiagonal();
  m.conditional_factor = ldlt.solve(d);
  Eigen::MatrixXd cond_cov = 2.0 * d - d * m.conditional_factor;
  cond_cov = 0.5 * (cond_cov + cond_cov.transpose());
  m.residual_factor = linalg::psd_factor(cond_cov);
  m.mu = std::move(mu);
  m.sigma = std::move(sigma);
  m.s = std::move(s);
  return m;
}

SecondOrderModel fit_second_order(const Eigen::MatrixXd& x, const SSolver& solver) {
  Eigen::VectorXd mu = linalg::column_means(x);
  Eigen::MatrixXd sigma;
  double shrinkage = 0.0;
  if (x.rows() < 2 * x.cols()) {
    auto shrunk = linalg::shrink_to_diagonal(x);
    sigma = std::move(shrunk.covariance);
    shrinkage = shrunk.intensity;
  } else {
    sigma = linalg::sample_covariance(x);
  }
  Eigen::VectorXd s = solver(sigma);
  SecondOrderModel m = make_second_order_model(std::move(mu), std::move(sigma), std::move(s));
  m.shrinkage = shrinkage;
  return m;
}

Eigen::MatrixXd sample_second_order(const SecondOrderModel& model, const Eigen::MatrixXd& x, Rng& rng) {
  if (x.cols() != model.mu.size()) throw std::invalid_argument("data width differs from the second-order model");
  const Eigen::MatrixXd centered = x.rowwise() - model.mu.transpose();
  const Eigen::MatrixXd z = standard_normal(x.rows(), x.cols(), rng);
  return x - centered * model.conditional_factor + z * model.residual_factor.transpose();
}

KnockoffMatrix second_order_knockoffs(const MixedDataset& x, std::uint64_t seed, const SSolver& solver) {
  require_valid(x);
  if (!x.all_numeric()) throw DataError("second-order knockoffs need an all-numeric dataset");
  Rng rng = make_rng(seed, {stream::kSecondOrder});
  Eigen::MatrixXd xt = sample_second_order(fit_second_order(x.values(), solver), x.values(), rng);
  return KnockoffMatrix{x.with_values(std::move(xt)), "second-order", seed};
}

KnockoffMatrix second_order_knockoffs_mixed(const MixedDataset& x, std::uint64_t seed) {
  require_valid(x);
  Rng rng = make_rng(seed, {stream::kSecondOrder});
  Eigen::MatrixXd xt = sample_second_order(fit_second_order(x.values()), x.values(), rng);
  for (int j : x.categorical_columns()) {
    const double top = x.column(j).levels;
    for (Eigen::Index i = 0; i < xt.rows(); ++i) xt(i, j) = std::clamp(std::round(xt(i, j)), 1.0, top);
  }
  return KnockoffMatrix{x.with_values(std::move(xt)), "second-order", seed};
}

ConditionalFit fit_conditional_residuals(const MixedDataset& x, const ForestParams& params,
                                         const ResidualOptions& options) {
  require_valid(x);
  const int p = static_cast<int>(x.cols());
  const Eigen::Index n = x.rows();
  std::vector<ColumnFit> fits(static_cast<std::size_t>(p));
  parallel_for(static_cast<std::size_t>(p), [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    const auto seed = derive_seed(params.seed, {stream::kColumnModel, jj});
    if (p == 1) {
      fits[jj] = fit_column(x, j, nullptr, params, seed, options.model, options.out_of_bag);
      return;
    }
    const auto cols = all_but(p, j);
    const MixedDataset features = x.select_columns(cols);
    fits[jj] = fit_column(x, j, &features, params, seed, options.model, options.out_of_bag);
  });

  ConditionalFit out;
  out.predicted = Eigen::MatrixXd::Zero(n, p);
  out.residuals.values = Eigen::MatrixXd::Zero(n, p);
  out.residuals.categorical_mask.assign(static_cast<std::size_t>(p), false);
  out.class_probabilities.resize(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) {
    auto& fit = fits[static_cast<std::size_t>(j)];
    out.oob_fallbacks += fit.fallbacks;
    if (x.is_categorical(j)) {
      out.residuals.categorical_mask[static_cast<std::size_t>(j)] = true;
      out.class_probabilities[static_cast<std::size_t>(j)] = std::move(fit.proba);
    } else {
      out.predicted.col(j) = fit.predicted;
      out.residuals.values.col(j) = x.values().col(j) - fit.predicted;
    }
  }
  return out;
}

int sample_level(std::span<const double> probabilities, Rng& rng) {
  double total = 0.0;
  for (double v : probabilities) total += std::max(v, 0.0);
  if (!(total > 0.0)) throw NumericalError("class probabilities sum to zero");
  std::uniform_real_distribution<double> unif(0.0, total);
  const double u = unif(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < probabilities.size(); ++k) {
    acc += std::max(probabilities[k], 0.0);
    if (u < acc) return static_cast<int>(k) + 1;
  }
  // u landed on the upper edge; return the last level with positive mass.
  for (std::size_t k = probabilities.size(); k-- > 0;)
    if (probabilities[k] > 0.0) return static_cast<int>(k) + 1;
  return static_cast<int>(probabilities.size());
}

KnockoffMatrix conditional_residual_knockoffs(const MixedDataset& x, const ForestParams& params,
                                              const ResidualKnockoffGenerator& generator,
                                              const ResidualOptions& options) {
  const ConditionalFit fit = fit_conditional_residuals(x, params, options);
  const int p = static_cast<int>(x.cols());

  std::vector<int> numeric;
  for (int j = 0; j < p; ++j)
    if (!x.is_categorical(j)) numeric.push_back(j);
  Eigen::MatrixXd gamma(x.rows(), static_cast<Eigen::Index>(numeric.size()));
  for (std::size_t k = 0; k < numeric.size(); ++k) gamma.col(static_cast<Eigen::Index>(k)) = fit.residuals.values.col(numeric[k]);
  const Eigen::MatrixXd gamma_tilde = knockoff_residuals(gamma, generator, 0);

  Eigen::MatrixXd xt = fit.predicted;
  for (std::size_t k = 0; k < numeric.size(); ++k) xt.col(numeric[k]) += gamma_tilde.col(static_cast<Eigen::Index>(k));
  for (int j : x.categorical_columns()) {
    Rng rng = make_rng(generator.seed, {stream::kCategoricalDraw, static_cast<std::uint64_t>(j)});
    const Eigen::MatrixXd& proba = fit.class_probabilities[static_cast<std::size_t>(j)];
    std::vector<double> row(static_cast<std::size_t>(proba.cols()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index k = 0; k < proba.cols(); ++k) row[static_cast<std::size_t>(k)] = proba(i, k);
      xt(i, j) = sample_level(row, rng);
    }
  }
  const char* name = generator.kind == ResidualKnockoffGenerator::Kind::SecondOrderOnResiduals ? "cr-second" : "cr-permute";
  return KnockoffMatrix{x.with_values(std::move(xt)), name, generator.seed};
}

KnockoffMatrix scip_forest_knockoffs(const MixedDataset& x, const ForestParams& params,
                                     const ResidualKnockoffGenerator& generator, const ScipOptions& options) {
  require_valid(x);
  const int p = static_cast<int>(x.cols());
  std::vector<int> order = options.order;
  if (order.empty()) {
    order.resize(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), 0);
  }
  {
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (int k = 0; k < p; ++k)
      if (static_cast<int>(sorted.size()) != p || sorted[static_cast<std::size_t>(k)] != k)
        throw std::invalid_argument("SCIP order must be a permutation of the columns");
  }

  Eigen::MatrixXd xt = x.values();
  std::vector<int> generated;
  for (int j : order) {
    const auto seed = derive_seed(params.seed, {stream::kColumnModel, static_cast<std::uint64_t>(j)});
    const auto& schema = x.column(j);
    ColumnFit fit;
    if (p == 1) {
      fit = fit_column(x, j, nullptr, params, seed, ConditionalModel::Forest, options.out_of_bag);
    } else {
      MixedDataset features = x.select_columns(all_but(p, j));
      if (!generated.empty()) {
        const MixedDataset previous = x.with_values(xt).select_columns(generated);
        features = hconcat(features, previous);
      }
      fit = fit_column(x, j, &features, params, seed, ConditionalModel::Forest, options.out_of_bag);
    }

    if (schema.is_categorical()) {
      Rng rng = make_rng(generator.seed, {stream::kCategoricalDraw, static_cast<std::uint64_t>(j)});
      std::vector<double> row(static_cast<std::size_t>(fit.proba.cols()));
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index k = 0; k < fit.proba.cols(); ++k) row[static_cast<std::size_t>(k)] = fit.proba(i, k);
        xt(i, j) = sample_level(row, rng);
      }
    } else {
      const Eigen::MatrixXd gamma = x.values().col(j) - fit.predicted;
      xt.col(j) = fit.predicted + knockoff_residuals(gamma, generator, static_cast<std::uint64_t>(j)).col(0);
    }
    generated.push_back(j);
  }
  const char* name = generator.kind == ResidualKnockoffGenerator::Kind::PermuteResiduals ? "scip-permute" : "scip-second";
  return KnockoffMatrix{x.with_values(std::move(xt)), name, generator.seed};
}

Eigen::VectorXd permute_residuals(std::span<const double> residuals, std::uint64_t seed) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(residuals.size()));
  std::copy(residuals.begin(), residuals.end(), out.data());
  Rng rng(seed);
  std::shuffle(out.data(), out.data() + out.size(), rng);
  return out;
}

ExchangeabilityReport exchangeability_diagnostic(const MixedDataset& x, const KnockoffMatrix& xt,
                                                 std::span<const int> swap_set, int n_moments) {
  const auto [xs, xts] = swap_columns(x, xt, swap_set);
  Eigen::MatrixXd joint(x.rows(), 2 * x.cols());
  joint << x.values(), xt.values();
  Eigen::MatrixXd swapped(x.rows(), 2 * x.cols());
  swapped << xs.values(), xts.values();

  ExchangeabilityReport report;
  report.mean_difference = (linalg::column_means(joint) - linalg::column_means(swapped)).cwiseAbs().maxCoeff();
  if (n_moments >= 2) {
    report.covariance_difference =
        (linalg::sample_covariance(joint) - linalg::sample_covariance(swapped)).cwiseAbs().maxCoeff();
  }
  return report;
}

}  // namespace crk
