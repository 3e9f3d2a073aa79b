#include "crk/errors.hpp"
#include "crk/knockoffs.hpp"
#include "crk/linalg.hpp"
#include "crk/parallel.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace crk;

namespace {

Eigen::MatrixXd ar1(int p, double rho) {
  Eigen::MatrixXd s(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) s(i, j) = std::pow(rho, std::abs(i - j));
  return s;
}

Eigen::MatrixXd gaussian(int n, const Eigen::MatrixXd& sigma, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  const Eigen::MatrixXd l = sigma.llt().matrixL();
  Eigen::MatrixXd z(n, sigma.rows());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < sigma.rows(); ++j) z(i, j) = g(rng);
  return z * l.transpose();
}

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

std::vector<double> column(const MixedDataset& d, int j) {
  return {d.values().col(j).data(), d.values().col(j).data() + d.rows()};
}

}  // namespace

TEST(EquiS, Identity) {
  const Eigen::VectorXd s = solve_equicorrelated_s(Eigen::MatrixXd::Identity(3, 3));
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(s[j], 1.0, 1e-12);
}

TEST(EquiS, TwoByTwoHandEigenvalues) {
  // eigenvalues of [[1, r], [r, 1]] are 1 +- r
  Eigen::MatrixXd a(2, 2);
  a << 1, 0.5, 0.5, 1;
  Eigen::VectorXd s = solve_equicorrelated_s(a);
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_NEAR(s[1], 1.0, 1e-12);
  a << 1, 0.75, 0.75, 1;
  s = solve_equicorrelated_s(a);
  EXPECT_NEAR(s[0], 0.5, 1e-12);
  EXPECT_NEAR(s[1], 0.5, 1e-12);
}

TEST(EquiS, ScalesWithTheDiagonal) {
  Eigen::MatrixXd a(2, 2);
  a << 4, 0.75 * 2 * 3, 0.75 * 2 * 3, 9;
  const Eigen::VectorXd s = solve_equicorrelated_s(a);
  EXPECT_NEAR(s[0], 0.5 * 4, 1e-12);
  EXPECT_NEAR(s[1], 0.5 * 9, 1e-12);
}

TEST(EquiS, Errors) {
  Eigen::MatrixXd ns(2, 2);
  ns << 1, 0.2, 0.3, 1;
  EXPECT_THROW(solve_equicorrelated_s(ns), std::invalid_argument);
  Eigen::MatrixXd bad(2, 2);
  bad << 1, 2, 2, 1;
  EXPECT_THROW(solve_equicorrelated_s(bad), NumericalError);
}

TEST(EquiS, RandomCovariancesStayPsd) {
  Rng rng(21);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    const int p = 2 + trial % 7;
    Eigen::MatrixXd a(p + 3, p);
    for (int i = 0; i < a.rows(); ++i)
      for (int j = 0; j < p; ++j) a(i, j) = g(rng);
    const Eigen::MatrixXd sigma = a.transpose() * a / a.rows();
    const Eigen::VectorXd s = solve_equicorrelated_s(sigma);
    EXPECT_GE(s.minCoeff(), 0.0);
    const Eigen::MatrixXd m = 2 * sigma - Eigen::MatrixXd(s.asDiagonal());
    EXPECT_GE(linalg::min_eigenvalue(m), -1e-8);
  }
}

TEST(SecondOrder, IdentityKnockoffsAreNearlyUncorrelatedWithOriginals) {
  const auto x = MixedDataset::numeric(gaussian(2000, Eigen::MatrixXd::Identity(3, 3), 22));
  const auto xt = second_order_knockoffs(x, 23);
  EXPECT_EQ(xt.generator, "second-order");
  for (int j = 0; j < 3; ++j) EXPECT_LT(std::abs(corr(x.values().col(j), xt.values().col(j))), 0.1);
}

TEST(SecondOrder, ZeroSGivesExactCopy) {
  const Eigen::MatrixXd x = gaussian(50, ar1(3, 0.3), 24);
  const auto model = make_second_order_model(Eigen::VectorXd::Zero(3), ar1(3, 0.3), Eigen::VectorXd::Zero(3));
  Rng rng(25);
  EXPECT_EQ(sample_second_order(model, x, rng), x);
}

TEST(SecondOrder, JointCovarianceMatchesG) {
  // A single n = 5000 draw has entry SE near 0.02 over 36 entries, so the band is
  // applied to the mean of ten independent draws.
  const Eigen::MatrixXd sigma = ar1(4, 0.5);
  const Eigen::VectorXd s = solve_equicorrelated_s(sigma);
  Eigen::MatrixXd g(8, 8);
  const Eigen::MatrixXd off = sigma - Eigen::MatrixXd(s.asDiagonal());
  g << sigma, off, off, sigma;
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(8, 8);
  for (int r = 0; r < 10; ++r) {
    const auto x = MixedDataset::numeric(gaussian(5000, sigma, 26 + 2 * r));
    const auto xt = second_order_knockoffs(x, 27 + 2 * r);
    Eigen::MatrixXd joint(5000, 8);
    joint << x.values(), xt.values();
    mean += linalg::sample_covariance(joint) / 10.0;
  }
  EXPECT_LT((mean - g).cwiseAbs().maxCoeff(), 0.05);
}

TEST(SecondOrder, RejectsCategoricalInput) {
  Eigen::MatrixXd v(3, 1);
  v << 1, 2, 1;
  const MixedDataset d(v, {ColumnSchema::categorical("c", 2)});
  EXPECT_THROW(second_order_knockoffs(d, 1), DataError);
}

TEST(SecondOrder, MixedBaselineKeepsValidLevels) {
  Rng rng(28);
  Eigen::MatrixXd v(200, 2);
  for (int i = 0; i < 200; ++i) {
    v(i, 0) = std::normal_distribution<double>()(rng);
    v(i, 1) = 1 + static_cast<int>(std::uniform_int_distribution<int>(0, 2)(rng));
  }
  const MixedDataset d(v, {ColumnSchema::numeric("x"), ColumnSchema::categorical("c", 3)});
  const auto xt = second_order_knockoffs_mixed(d, 29);
  EXPECT_TRUE(validate(xt.data).empty());
  EXPECT_EQ(xt.data.schema(), d.schema());
}

TEST(ConditionalResiduals, SingleColumnUsesTheMean) {
  Eigen::MatrixXd v(5, 1);
  v << 1, 2, 3, 4, 10;
  const auto x = MixedDataset::numeric(v);
  const auto fit = fit_conditional_residuals(x, {});
  for (int i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(fit.predicted(i, 0), 4.0);
    EXPECT_DOUBLE_EQ(fit.residuals.values(i, 0), v(i, 0) - 4.0);
  }
  const auto xt = conditional_residual_knockoffs(x, {}, {ResidualKnockoffGenerator::Kind::PermuteResiduals, 3});
  std::vector<double> a = column(xt.data, 0), b = column(x, 0);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(ConditionalResiduals, GaussianResidualCovarianceOracle) {
  // Node-wise regression residuals of a bivariate normal with correlation r:
  // Gamma = A X with A = [[1, -r], [-r, 1]], so Cov(Gamma) = A S A^T.
  Eigen::MatrixXd s(2, 2);
  s << 1, 0.5, 0.5, 1;
  Eigen::MatrixXd a(2, 2);
  a << 1, -0.5, -0.5, 1;
  const Eigen::MatrixXd oracle = a * s * a.transpose();
  EXPECT_NEAR(oracle(0, 0), 0.75, 1e-12);
  EXPECT_NEAR(oracle(0, 1), -0.375, 1e-12);

  const auto x = MixedDataset::numeric(gaussian(4000, s, 30));
  ResidualOptions linear;
  linear.model = ConditionalModel::Linear;
  const auto fit = fit_conditional_residuals(x, {}, linear);
  const Eigen::MatrixXd cov = linalg::sample_covariance(fit.residuals.values);
  EXPECT_LT((cov - oracle).cwiseAbs().maxCoeff(), 0.05);
}

TEST(ConditionalResiduals, ForestResidualsApproachTheOracle) {
  Eigen::MatrixXd s(2, 2);
  s << 1, 0.5, 0.5, 1;
  const auto x = MixedDataset::numeric(gaussian(2000, s, 31));
  ForestParams params;
  params.n_trees = 100;
  params.seed = 32;
  // Deep out-of-bag trees add their own variance on a one-feature problem; large
  // leaves bring the fit close to the regression line.
  params.min_node_size = 100;
  const auto fit = fit_conditional_residuals(x, params);
  const Eigen::MatrixXd cov = linalg::sample_covariance(fit.residuals.values);
  EXPECT_NEAR(cov(0, 0), 0.75, 0.1);
  EXPECT_NEAR(cov(1, 1), 0.75, 0.1);
  EXPECT_LT(cov(0, 1), 0.0);

  params.min_node_size = 0;
  const auto deep = fit_conditional_residuals(x, params);
  const Eigen::MatrixXd dcov = linalg::sample_covariance(deep.residuals.values);
  EXPECT_GT(dcov(0, 0), cov(0, 0));
  EXPECT_LT(dcov(0, 0), 1.25);
}

TEST(ConditionalResiduals, CategoricalColumnsAreZeroInUAndResiduals) {
  Rng rng(33);
  Eigen::MatrixXd v(100, 2);
  for (int i = 0; i < 100; ++i) {
    v(i, 0) = std::normal_distribution<double>()(rng);
    v(i, 1) = 1 + (v(i, 0) > 0);
  }
  const MixedDataset d(v, {ColumnSchema::numeric("x"), ColumnSchema::categorical("c", 2)});
  ForestParams params;
  params.n_trees = 20;
  const auto fit = fit_conditional_residuals(d, params);
  EXPECT_TRUE(fit.residuals.values.col(1).isZero(0.0));
  EXPECT_TRUE(fit.predicted.col(1).isZero(0.0));
  EXPECT_EQ(fit.residuals.categorical_mask, (std::vector<bool>{false, true}));
  ASSERT_EQ(fit.class_probabilities[1].rows(), 100);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(fit.class_probabilities[1].row(i).sum(), 1.0, 1e-12);
}

TEST(ConditionalResiduals, IndependentCategoricalMarginals) {
  Rng rng(34);
  const int n = 10000;
  Eigen::MatrixXd v(n, 2);
  std::discrete_distribution<int> levels({0.2, 0.3, 0.5});
  for (int i = 0; i < n; ++i) {
    v(i, 0) = std::normal_distribution<double>()(rng);
    v(i, 1) = 1 + levels(rng);
  }
  const MixedDataset d(v, {ColumnSchema::numeric("x"), ColumnSchema::categorical("c", 3)});
  ForestParams params;
  params.n_trees = 50;
  params.seed = 35;
  const auto xt = conditional_residual_knockoffs(d, params, {});
  Eigen::Vector3d freq = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) freq[static_cast<int>(xt.data(i, 1)) - 1] += 1.0 / n;
  EXPECT_NEAR(freq[0], 0.2, 0.03);
  EXPECT_NEAR(freq[1], 0.3, 0.03);
  EXPECT_NEAR(freq[2], 0.5, 0.03);
}

TEST(ConditionalResiduals, SchemaAndDeterminism) {
  const auto x = MixedDataset::numeric(gaussian(150, ar1(3, 0.4), 36));
  ForestParams params;
  params.n_trees = 25;
  params.seed = 37;
  set_thread_count(1);
  const auto a = conditional_residual_knockoffs(x, params, {ResidualKnockoffGenerator::Kind::SecondOrderOnResiduals, 5});
  set_thread_count(3);
  const auto b = conditional_residual_knockoffs(x, params, {ResidualKnockoffGenerator::Kind::SecondOrderOnResiduals, 5});
  set_thread_count(1);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_EQ(a.data.schema(), x.schema());
  EXPECT_EQ(a.generator, "cr-second");
  const auto c = conditional_residual_knockoffs(x, params, {ResidualKnockoffGenerator::Kind::SecondOrderOnResiduals, 6});
  EXPECT_NE(a.values(), c.values());
}

TEST(Scip, SingleColumnMatchesConditionalResiduals) {
  Eigen::MatrixXd v(6, 1);
  v << 3, 1, 4, 1, 5, 9;
  const auto x = MixedDataset::numeric(v);
  const ResidualKnockoffGenerator gen{ResidualKnockoffGenerator::Kind::PermuteResiduals, 8};
  const auto a = scip_forest_knockoffs(x, {}, gen);
  const auto b = conditional_residual_knockoffs(x, {}, gen);
  EXPECT_EQ(a.values(), b.values());
}

TEST(Scip, IndependentColumnsKeepTheirMarginals) {
  Rng rng(38);
  const int n = 2000;
  Eigen::MatrixXd v(n, 3);
  for (int i = 0; i < n; ++i) {
    v(i, 0) = std::normal_distribution<double>()(rng);
    v(i, 1) = std::exponential_distribution<double>(1.0)(rng);
    v(i, 2) = std::uniform_real_distribution<double>(-2, 2)(rng);
  }
  const auto x = MixedDataset::numeric(v);
  ForestParams params;
  params.n_trees = 50;
  params.seed = 39;
  // With independent columns the true conditional mean is constant; leaves of half
  // the sample make the forest fit that. Deep forests add prediction noise that
  // smooths bounded marginals (the exponential's edge at zero).
  params.min_node_size = n / 2;
  const auto xt = scip_forest_knockoffs(x, params);
  EXPECT_EQ(xt.generator, "scip-permute");
  // Two-sample KS critical value at alpha = 0.01: 1.628 * sqrt(2 / n).
  const double crit = 1.628 * std::sqrt(2.0 / n);
  for (int j = 0; j < 3; ++j) EXPECT_LT(ks_statistic(column(x, j), column(xt.data, j)), crit) << "column " << j;
}

TEST(Scip, OrderIsValidatedAndMatters) {
  const auto x = MixedDataset::numeric(gaussian(120, ar1(3, 0.5), 40));
  ForestParams params;
  params.n_trees = 20;
  params.seed = 41;
  ScipOptions reversed;
  reversed.order = {2, 1, 0};
  const auto a = scip_forest_knockoffs(x, params);
  const auto b = scip_forest_knockoffs(x, params, {ResidualKnockoffGenerator::Kind::PermuteResiduals, 0}, reversed);
  EXPECT_NE(a.values(), b.values());
  ScipOptions bad;
  bad.order = {0, 0, 1};
  EXPECT_THROW(scip_forest_knockoffs(x, params, {}, bad), std::invalid_argument);
}

TEST(Permute, PreservesTheMultiset) {
  const std::vector<double> r{3.5, -1, 2, 2, 0, 7};
  const Eigen::VectorXd out = permute_residuals(r, 42);
  std::vector<double> a(out.data(), out.data() + out.size()), b = r;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  const std::vector<double> one{1.25};
  EXPECT_EQ(permute_residuals(one, 1)[0], 1.25);
}

TEST(Exchangeability, EmptySwapIsExactlyZero) {
  const auto x = MixedDataset::numeric(gaussian(300, ar1(3, 0.5), 43));
  const auto xt = second_order_knockoffs(x, 44);
  const auto r = exchangeability_diagnostic(x, xt, {}, 2);
  EXPECT_EQ(r.mean_difference, 0.0);
  EXPECT_EQ(r.covariance_difference, 0.0);
}

TEST(Exchangeability, SecondOrderKnockoffsPass) {
  const auto x = MixedDataset::numeric(gaussian(5000, ar1(5, 0.5), 45));
  const auto xt = second_order_knockoffs(x, 46);
  const std::vector<int> s{0, 2, 3};
  EXPECT_LT(exchangeability_diagnostic(x, xt, s, 2).covariance_difference, 0.08);
}

TEST(Exchangeability, DetectsAPlantedShift) {
  const auto x = MixedDataset::numeric(gaussian(500, ar1(2, 0.5), 47));
  const KnockoffMatrix broken{x.with_values(x.values().array() + 10.0), "broken", 0};
  const std::vector<int> s{0};
  EXPECT_NEAR(exchangeability_diagnostic(x, broken, s, 1).mean_difference, 10.0, 1e-9);
}
