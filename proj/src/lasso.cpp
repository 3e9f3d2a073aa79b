#include "crk/lasso.hpp"

#include "crk/errors.hpp"
#include "crk/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace crk {

namespace {

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

std::vector<double> validated_grid(std::span<const double> grid) {
  std::vector<double> g(grid.begin(), grid.end());
  for (double v : g)
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("lambda grid must be finite and non-negative");
  std::sort(g.begin(), g.end(), std::greater<>());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

LassoFit path_on(const LassoProblem& problem, const std::vector<double>& grid) {
  LassoFit fit;
  const auto L = static_cast<Eigen::Index>(grid.size());
  fit.lambda_grid = Eigen::Map<const Eigen::VectorXd>(grid.data(), L);
  fit.coef_path.resize(L, problem.cols());
  fit.intercept.resize(L);
  fit.feature_mean = problem.means();
  fit.feature_scale = problem.scales();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(problem.cols());
  for (Eigen::Index k = 0; k < L; ++k) {
    beta = problem.solve(grid[static_cast<std::size_t>(k)], beta);
    fit.coef_path.row(k) = beta.transpose();
  }
  for (Eigen::Index k = 0; k < L; ++k) {
    const Eigen::VectorXd b = fit.original_scale_coefficients(k);
    fit.intercept[k] = problem.response_mean() - fit.feature_mean.dot(b);
  }
  fit.chosen_index = L - 1;
  fit.chosen_lambda = grid.back();
  return fit;
}

}  // namespace

LassoProblem::LassoProblem(const Eigen::MatrixXd& features, const Eigen::VectorXd& y)
    : LassoProblem(features, y, Options{}) {}

LassoProblem::LassoProblem(const Eigen::MatrixXd& features, const Eigen::VectorXd& y, Options options)
    : options_(options) {
  if (features.rows() != y.size()) throw std::invalid_argument("lasso: feature rows differ from response length");
  if (features.rows() < 2) throw std::invalid_argument("lasso needs at least 2 rows");
  if (!features.allFinite() || !y.allFinite()) throw DataError("lasso inputs contain non-finite values");
  const auto n = static_cast<double>(features.rows());
  mean_ = features.colwise().mean().transpose();
  z_ = features.rowwise() - mean_.transpose();
  scale_.resize(features.cols());
  for (Eigen::Index k = 0; k < z_.cols(); ++k) {
    const double sd = std::sqrt(z_.col(k).squaredNorm() / n);
    // Relative threshold so columns that are constant up to rounding are dropped.
    const double ref = std::max(1.0, mean_[k] == 0.0 ? 0.0 : std::abs(mean_[k]));
    if (sd > 1e-12 * ref) {
      scale_[k] = sd;
      z_.col(k) /= sd;
    } else {
      scale_[k] = 0.0;
      z_.col(k).setZero();
    }
  }
  y_mean_ = y.mean();
  yc_ = y.array() - y_mean_;
  gram_ = z_.transpose() * z_ / n;
  zty_ = z_.transpose() * yc_ / n;
}

double LassoProblem::lambda_max() const {
  if (z_.cols() == 0) return 0.0;
  return (z_.transpose() * yc_).cwiseAbs().maxCoeff() / static_cast<double>(rows());
}

double LassoProblem::kkt_violation(const Eigen::VectorXd& beta, double lambda) const {
  const Eigen::VectorXd g = z_.transpose() * (yc_ - z_ * beta) / static_cast<double>(rows());
  double worst = 0.0;
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    if (scale_[k] == 0.0) continue;
    const double v = beta[k] == 0.0 ? std::max(0.0, std::abs(g[k]) - lambda)
                                    : std::abs(g[k] - lambda * (beta[k] > 0 ? 1.0 : -1.0));
    worst = std::max(worst, v);
  }
  return worst;
}

double LassoProblem::duality_gap(const Eigen::VectorXd& beta, double lambda) const {
  const double n = static_cast<double>(rows());
  const Eigen::VectorXd r = yc_ - z_ * beta;
  const double primal = r.squaredNorm() / (2 * n) + lambda * beta.lpNorm<1>();
  const double grad_inf = z_.cols() ? (z_.transpose() * r).cwiseAbs().maxCoeff() / n : 0.0;
  const double s = grad_inf > lambda ? lambda / grad_inf : 1.0;
  const Eigen::VectorXd theta = s * r;
  const double dual = (yc_.squaredNorm() - (yc_ - theta).squaredNorm()) / (2 * n);
  return primal - dual;
}

Eigen::VectorXd LassoProblem::solve(double lambda) const { return solve(lambda, Eigen::VectorXd::Zero(cols())); }

bool LassoProblem::converged(const Eigen::VectorXd& beta, double lambda) const {
  const double n = static_cast<double>(rows());
  const double gap_target = options_.gap_tolerance * std::max(yc_.squaredNorm() / (2 * n), 1e-300);
  const double kkt_target = options_.kkt_tolerance * std::max(1.0, std::sqrt(yc_.squaredNorm() / n));
  if (kkt_violation(beta, lambda) > kkt_target) return false;
  // At lambda = 0 the scaled dual point collapses and the gap carries no information.
  return lambda == 0.0 || duality_gap(beta, lambda) <= gap_target;
}

Eigen::VectorXd LassoProblem::solve(double lambda, const Eigen::VectorXd& warm) const {
  if (warm.size() != cols()) throw std::invalid_argument("warm start has wrong length");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and non-negative");
  const Eigen::Index p = cols();
  Eigen::VectorXd beta = warm;
  for (Eigen::Index k = 0; k < p; ++k)
    if (scale_[k] == 0.0) beta[k] = 0.0;
  // grad = Z^T (y - Z beta) / n, kept current under coordinate moves.
  Eigen::VectorXd grad = zty_ - gram_ * beta;

  auto update = [&](Eigen::Index k) {
    const double old = beta[k];
    const double next = soft_threshold(grad[k] + old, lambda);  // gram_(k,k) == 1
    if (next != old) {
      grad.noalias() -= (next - old) * gram_.col(k);
      beta[k] = next;
    }
    return std::abs(next - old);
  };

  std::vector<Eigen::Index> active;
  for (int outer = 0; outer < options_.max_iterations; ++outer) {
    for (Eigen::Index k = 0; k < p; ++k)
      if (scale_[k] != 0.0) update(k);
    active.clear();
    for (Eigen::Index k = 0; k < p; ++k)
      if (beta[k] != 0.0) active.push_back(k);
    for (int inner = 0; inner < 20; ++inner) {
      double max_change = 0.0;
      for (Eigen::Index k : active) max_change = std::max(max_change, update(k));
      if (max_change <= 1e-12) break;
    }

    // Feature-sign refinement: solve exactly on the active set under the current
    // signs; if a coordinate would cross zero, move to the best point on the
    // segment (the target or a zero crossing) and drop the zeroed coordinates.
    auto objective = [&](const Eigen::VectorXd& b) {
      return 0.5 * b.dot(gram_ * b) - b.dot(zty_) + lambda * b.lpNorm<1>();
    };
    for (std::size_t step = 0; step <= active.size() && !active.empty(); ++step) {
      const auto m = static_cast<Eigen::Index>(active.size());
      Eigen::MatrixXd g(m, m);
      Eigen::VectorXd rhs(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        rhs[a] = zty_[active[a]] - lambda * (beta[active[a]] > 0 ? 1.0 : -1.0);
        for (Eigen::Index b = 0; b < m; ++b) g(a, b) = gram_(active[a], active[b]);
      }
      // Dummy columns of one categorical feature are collinear after centering,
      // so the system can be singular; take its minimum-norm solution.
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(g);
      cod.setThreshold(1e-10);
      const Eigen::VectorXd exact = cod.solve(rhs);
      if (!exact.allFinite() || (g * exact - rhs).lpNorm<Eigen::Infinity>() > 1e-9 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>()))
        break;
      Eigen::VectorXd target = Eigen::VectorXd::Zero(p);
      bool same_sign = true;
      for (Eigen::Index a = 0; a < m; ++a) {
        target[active[a]] = exact[a];
        same_sign = same_sign && exact[a] * beta[active[a]] > 0;
      }
      if (same_sign) {
        if (converged(target, lambda)) return target;
        break;
      }
      Eigen::VectorXd best = target;
      double best_value = objective(target);
      for (Eigen::Index a = 0; a < m; ++a) {
        const double from = beta[active[a]], to = exact[a];
        if (from * to > 0) continue;
        const double t = from / (from - to);
        Eigen::VectorXd point = beta + t * (target - beta);
        point[active[a]] = 0.0;
        const double value = objective(point);
        if (value < best_value) {
          best_value = value;
          best = std::move(point);
        }
      }
      if (!(best_value <= objective(beta))) break;
      beta = std::move(best);
      active.erase(std::remove_if(active.begin(), active.end(), [&](Eigen::Index k) { return beta[k] == 0.0; }),
                   active.end());
    }
    if (converged(beta, lambda)) return beta;
    grad = zty_ - gram_ * beta;  // shed accumulated rounding
  }
  throw NumericalError("lasso coordinate descent did not converge at lambda " + std::to_string(lambda));
}

Eigen::VectorXd LassoFit::original_scale_coefficients(Eigen::Index grid_index) const {
  Eigen::VectorXd b = coefficients(grid_index);
  for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = feature_scale[k] > 0 ? b[k] / feature_scale[k] : 0.0;
  return b;
}

Eigen::VectorXd LassoFit::predict(const Eigen::MatrixXd& features, Eigen::Index grid_index) const {
  return (features * original_scale_coefficients(grid_index)).array() + intercept[grid_index];
}

Eigen::VectorXd default_lambda_grid(const LassoProblem& problem, int length, double ratio) {
  if (length < 1) throw std::invalid_argument("grid length must be >= 1");
  double top = problem.lambda_max();
  if (!(top > 0.0)) top = 1.0;  // y orthogonal to every column: any lambda gives the zero solution
  Eigen::VectorXd grid(length);
  for (int k = 0; k < length; ++k) {
    const double t = length == 1 ? 0.0 : static_cast<double>(k) / (length - 1);
    grid[k] = top * std::pow(ratio, t);
  }
  return grid;
}

LassoFit lasso_path(const Eigen::MatrixXd& features, const Eigen::VectorXd& y, std::span<const double> lambda_grid) {
  const LassoProblem problem(features, y);
  std::vector<double> grid;
  if (lambda_grid.empty()) {
    const Eigen::VectorXd g = default_lambda_grid(problem);
    grid.assign(g.data(), g.data() + g.size());
  } else {
    grid = validated_grid(lambda_grid);
  }
  return path_on(problem, grid);
}

std::vector<int> fold_assignment(Eigen::Index n, int k, std::uint64_t seed) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(seed, {stream::kFolds});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (std::size_t pos = 0; pos < perm.size(); ++pos) fold[static_cast<std::size_t>(perm[pos])] = static_cast<int>(pos % static_cast<std::size_t>(k));
  return fold;
}

LassoFit lasso_cv(const Eigen::MatrixXd& features, const Eigen::VectorXd& y, int n_folds, std::uint64_t seed,
                  std::span<const double> lambda_grid) {
  if (n_folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  if (features.rows() < n_folds) throw std::invalid_argument("fewer rows than folds");

  const LassoProblem full(features, y);
  std::vector<double> grid;
  if (lambda_grid.empty()) {
    const Eigen::VectorXd g = default_lambda_grid(full);
    grid.assign(g.data(), g.data() + g.size());
  } else {
    grid = validated_grid(lambda_grid);
  }
  LassoFit fit = path_on(full, grid);

  const auto fold = fold_assignment(features.rows(), n_folds, seed);
  const auto L = static_cast<Eigen::Index>(grid.size());
  fit.cv_error = Eigen::VectorXd::Zero(L);
  for (int f = 0; f < n_folds; ++f) {
    std::vector<Eigen::Index> train, test;
    for (std::size_t i = 0; i < fold.size(); ++i) (fold[i] == f ? test : train).push_back(static_cast<Eigen::Index>(i));
    const Eigen::MatrixXd xtr = features(train, Eigen::all);
    const Eigen::VectorXd ytr = y(train);
    const Eigen::MatrixXd xte = features(test, Eigen::all);
    const Eigen::VectorXd yte = y(test);
    const LassoFit sub = path_on(LassoProblem(xtr, ytr), grid);
    for (Eigen::Index k = 0; k < L; ++k) fit.cv_error[k] += (sub.predict(xte, k) - yte).squaredNorm() / static_cast<double>(test.size());
  }
  fit.cv_error /= static_cast<double>(n_folds);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < L; ++k)
    if (fit.cv_error[k] < fit.cv_error[best]) best = k;
  fit.chosen_index = best;
  fit.chosen_lambda = grid[static_cast<std::size_t>(best)];
  return fit;
}

}  // namespace crk
