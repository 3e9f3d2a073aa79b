#include "crk/importance.hpp"

#include "crk/errors.hpp"
#include "crk/parallel.hpp"
#include "crk/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace crk {

namespace {

std::uint64_t column_hash(const Eigen::VectorXd& v) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    h ^= std::bit_cast<std::uint64_t>(v[i] == 0.0 ? 0.0 : v[i]);  // fold -0 into +0
    h = mix64(h * 0x100000001b3ull);
  }
  return h;
}

// True when column a should come before column b in the canonical pair order.
bool canonical_first(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const auto ha = column_hash(a), hb = column_hash(b);
  if (ha != hb) return ha < hb;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return a[i] < b[i];
  return true;
}

void require_pair(const MixedDataset& x, const MixedDataset& xt) {
  if (x.rows() != xt.rows() || x.cols() != xt.cols())
    throw DataError("knockoff matrix shape differs from the data");
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto& a = x.column(j);
    const auto& b = xt.column(j);
    if (a.kind != b.kind || a.levels != b.levels)
      throw DataError("knockoff column " + std::to_string(j + 1) + " has a different encoding from the data");
  }
}

double reduce(const std::vector<double>& values, GroupReduction how) {
  double out = 0.0;
  for (double v : values) {
    const double a = std::abs(v);
    switch (how) {
      case GroupReduction::Max: out = std::max(out, a); break;
      case GroupReduction::L2: out += a * a; break;
      case GroupReduction::SumAbs: out += a; break;
    }
  }
  return how == GroupReduction::L2 ? std::sqrt(out) : out;
}

std::vector<std::string> names_of(const MixedDataset& x) {
  std::vector<std::string> names;
  for (const auto& c : x.schema()) names.push_back(c.name);
  return names;
}

// Per-feature group reduction of a per-design-column score vector.
WStatistics group_difference(const AugmentedDesign& aug, const OneHotDesign& design, const Eigen::VectorXd& score,
                             GroupReduction how, bool absolute_difference) {
  const auto p = static_cast<Eigen::Index>(aug.original.size());
  std::vector<std::vector<double>> groups(static_cast<std::size_t>(aug.data.cols()));
  for (std::size_t k = 0; k < design.source_column.size(); ++k)
    groups[static_cast<std::size_t>(design.source_column[k])].push_back(score[static_cast<Eigen::Index>(k)]);
  WStatistics w;
  w.w.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double t = reduce(groups[static_cast<std::size_t>(aug.original[j])], how);
    const double tt = reduce(groups[static_cast<std::size_t>(aug.knockoff[j])], how);
    w.w[j] = absolute_difference ? std::abs(t) - std::abs(tt) : t - tt;
  }
  return w;
}

// Wraps a model fitted on the canonical augmented layout so callers can pass
// rows in the natural [X, X~] layout.
class CanonicalModel : public OutcomeModel {
 public:
  CanonicalModel(std::vector<int> natural_to_design) : map_(std::move(natural_to_design)) {}

  double predict(std::span<const double> row) const override {
    thread_local std::vector<double> buf;
    buf.resize(map_.size());
    for (std::size_t k = 0; k < map_.size(); ++k) buf[static_cast<std::size_t>(map_[k])] = row[k];
    return predict_design(buf);
  }

  Eigen::MatrixXd gradients(const Eigen::MatrixXd& rows) const override {
    Eigen::MatrixXd design(rows.rows(), rows.cols());
    for (std::size_t k = 0; k < map_.size(); ++k) design.col(map_[k]) = rows.col(static_cast<Eigen::Index>(k));
    const Eigen::MatrixXd g = gradients_design(design);
    Eigen::MatrixXd out(rows.rows(), rows.cols());
    for (std::size_t k = 0; k < map_.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = g.col(map_[k]);
    return out;
  }

 protected:
  virtual double predict_design(std::span<const double> row) const = 0;
  virtual Eigen::MatrixXd gradients_design(const Eigen::MatrixXd&) const {
    throw std::logic_error("model has no exact gradients");
  }

 private:
  std::vector<int> map_;
};

class ForestOutcome final : public CanonicalModel {
 public:
  ForestOutcome(std::vector<int> map, Forest forest) : CanonicalModel(std::move(map)), forest_(std::move(forest)) {}

 protected:
  double predict_design(std::span<const double> row) const override { return forest_.predict(row); }

 private:
  Forest forest_;
};

// MLP on the one-hot encoding (all levels) of the augmented design.
class MlpOutcome final : public CanonicalModel {
 public:
  MlpOutcome(std::vector<int> map, std::vector<FeatureSpec> specs, Mlp mlp)
      : CanonicalModel(std::move(map)), specs_(std::move(specs)), mlp_(std::move(mlp)) {
    for (const auto& s : specs_) {
      offset_.push_back(width_);
      width_ += s.categorical ? s.levels : 1;
    }
  }

  bool has_gradient() const override { return true; }

  Eigen::MatrixXd encode(const Eigen::MatrixXd& design) const {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(design.rows(), width_);
    for (std::size_t c = 0; c < specs_.size(); ++c) {
      const auto col = static_cast<Eigen::Index>(c);
      if (!specs_[c].categorical) {
        e.col(offset_[c]) = design.col(col);
        continue;
      }
      for (Eigen::Index i = 0; i < design.rows(); ++i) {
        const auto level = static_cast<int>(std::lround(design(i, col)));
        if (level >= 1 && level <= specs_[c].levels) e(i, offset_[c] + level - 1) = 1.0;
      }
    }
    return e;
  }

 protected:
  double predict_design(std::span<const double> row) const override {
    const Eigen::MatrixXd r = Eigen::Map<const Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
    return mlp_.predict(encode(r))[0];
  }

  // Partial derivatives for numeric columns; categorical columns get 0 (they
  // are handled by the level sweep).
  Eigen::MatrixXd gradients_design(const Eigen::MatrixXd& design) const override {
    const Eigen::MatrixXd g = mlp_.input_gradients(encode(design));
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(design.rows(), design.cols());
    for (std::size_t c = 0; c < specs_.size(); ++c)
      if (!specs_[c].categorical) out.col(static_cast<Eigen::Index>(c)) = g.col(offset_[c]);
    return out;
  }

 private:
  std::vector<FeatureSpec> specs_;
  std::vector<Eigen::Index> offset_;
  Eigen::Index width_ = 0;
  Mlp mlp_;
};

Eigen::MatrixXd natural_rows(const MixedDataset& x, const MixedDataset& xt) {
  Eigen::MatrixXd rows(x.rows(), 2 * x.cols());
  rows << x.values(), xt.values();
  return rows;
}

std::vector<int> natural_to_design(const AugmentedDesign& aug) {
  const auto p = aug.original.size();
  std::vector<int> map(2 * p);
  for (std::size_t j = 0; j < p; ++j) {
    map[j] = aug.original[j];
    map[p + j] = aug.knockoff[j];
  }
  return map;
}

}  // namespace

Eigen::MatrixXd OutcomeModel::gradients(const Eigen::MatrixXd&) const {
  throw std::logic_error("model has no exact gradients");
}

LinearOutcomeModel::LinearOutcomeModel(Eigen::VectorXd coef, double intercept)
    : coef_(std::move(coef)), intercept_(intercept) {}

double LinearOutcomeModel::predict(std::span<const double> row) const {
  if (static_cast<Eigen::Index>(row.size()) != coef_.size()) throw std::invalid_argument("row has wrong width");
  return intercept_ + Eigen::Map<const Eigen::VectorXd>(row.data(), coef_.size()).dot(coef_);
}

Eigen::MatrixXd LinearOutcomeModel::gradients(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != coef_.size()) throw std::invalid_argument("rows have wrong width");
  return Eigen::VectorXd::Ones(rows.rows()) * coef_.transpose();
}

AugmentedDesign augment(const MixedDataset& x, const MixedDataset& xt) {
  require_pair(x, xt);
  const Eigen::Index n = x.rows(), p = x.cols();
  Eigen::MatrixXd values(n, 2 * p);
  std::vector<ColumnSchema> schema(static_cast<std::size_t>(2 * p));
  AugmentedDesign aug;
  aug.original.resize(static_cast<std::size_t>(p));
  aug.knockoff.resize(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    const Eigen::VectorXd a = x.values().col(j), b = xt.values().col(j);
    const bool keep = canonical_first(a, b);
    const auto first = static_cast<int>(2 * j), second = static_cast<int>(2 * j + 1);
    aug.original[static_cast<std::size_t>(j)] = keep ? first : second;
    aug.knockoff[static_cast<std::size_t>(j)] = keep ? second : first;
    values.col(first) = keep ? a : b;
    values.col(second) = keep ? b : a;
    // Names are pair-symmetric too, so the design never remembers which side is which.
    ColumnSchema c = x.column(j);
    c.name = x.column(j).name + "#a";
    schema[static_cast<std::size_t>(first)] = c;
    c.name = x.column(j).name + "#b";
    schema[static_cast<std::size_t>(second)] = c;
  }
  aug.data = MixedDataset(std::move(values), std::move(schema));
  return aug;
}

// ---------------------------------------------------------------------------

WStatistics lcd_statistics(const MixedDataset& x, const MixedDataset& xt, const Eigen::VectorXd& y,
                           const LassoStatOptions& options) {
  if (y.size() != x.rows()) throw std::invalid_argument("response length differs from the number of rows");
  const AugmentedDesign aug = augment(x, xt);
  const OneHotDesign design = one_hot(aug.data, false);
  Eigen::VectorXd coef;
  if (options.fixed_lambda) {
    const double lambda = *options.fixed_lambda;
    coef = lasso_path(design.matrix, y, std::span<const double>(&lambda, 1)).chosen_coefficients();
  } else {
    coef = lasso_cv(design.matrix, y, options.n_folds, options.seed).chosen_coefficients();
  }
  WStatistics w = group_difference(aug, design, coef, options.reduction, true);
  w.method = "lcd";
  w.feature_names = names_of(x);
  w.seed = options.seed;
  return w;
}

Eigen::VectorXd lasso_entry_lambdas(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                    const LassoMaxOptions& options) {
  if (!(options.relative_tolerance > 0)) throw std::invalid_argument("relative tolerance must be positive");
  const LassoProblem problem(design, y);
  const Eigen::VectorXd grid = default_lambda_grid(problem, options.grid_length);
  const LassoFit fit = lasso_path(design, y, std::span<const double>(grid.data(), static_cast<std::size_t>(grid.size())));
  const Eigen::Index m = design.cols();
  Eigen::VectorXd entry = Eigen::VectorXd::Zero(m);
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t kk) {
    const auto k = static_cast<Eigen::Index>(kk);
    Eigen::Index first = -1;
    for (Eigen::Index g = 0; g < fit.lambda_grid.size(); ++g)
      if (fit.coef_path(g, k) != 0.0) {
        first = g;
        break;
      }
    if (first < 0) return;  // never active
    if (first == 0) {
      entry[k] = fit.lambda_grid[0];
      return;
    }
    double hi = fit.lambda_grid[first - 1];  // coefficient zero
    double lo = fit.lambda_grid[first];      // coefficient nonzero
    Eigen::VectorXd warm = fit.coefficients(first);
    while ((hi - lo) > options.relative_tolerance * lo) {
      const double mid = 0.5 * (hi + lo);
      const Eigen::VectorXd b = problem.solve(mid, warm);
      if (b[k] != 0.0) {
        lo = mid;
        warm = b;
      } else {
        hi = mid;
      }
    }
    entry[k] = 0.5 * (hi + lo);
  });
  return entry;
}

WStatistics lasso_max_statistics(const MixedDataset& x, const MixedDataset& xt, const Eigen::VectorXd& y,
                                 const LassoMaxOptions& options) {
  if (y.size() != x.rows()) throw std::invalid_argument("response length differs from the number of rows");
  const AugmentedDesign aug = augment(x, xt);
  const OneHotDesign design = one_hot(aug.data, false);
  const Eigen::VectorXd entry = lasso_entry_lambdas(design.matrix, y, options);
  WStatistics w = group_difference(aug, design, entry, options.reduction, false);
  w.method = "lasso-max";
  w.feature_names = names_of(x);
  return w;
}

// ---------------------------------------------------------------------------

double categorical_local_score(std::span<const double> level_predictions) {
  double hi = 0.0, lo = 0.0;
  for (double v : level_predictions) {
    hi = std::max(hi, v);
    lo = std::min(lo, v);
  }
  return hi - lo;
}

LocalScores mald_numeric(const OutcomeModel& model, const MixedDataset& x, const MixedDataset& xt, int j, double b,
                         double r, bool use_exact_gradient) {
  require_pair(x, xt);
  if (j < 0 || j >= x.cols()) throw std::out_of_range("feature index out of range");
  if (x.is_categorical(j)) throw std::invalid_argument("mald_numeric called on a categorical column");
  if (!(r > 0)) throw std::invalid_argument("exponent r must be positive");
  const bool exact = use_exact_gradient && model.has_gradient();
  if (!exact && !(b > 0)) throw std::invalid_argument("bandwidth b must be positive for finite differences");

  const Eigen::MatrixXd rows = natural_rows(x, xt);
  const Eigen::Index n = rows.rows(), p = x.cols();
  Eigen::VectorXd d0(n), d1(n);
  if (exact) {
    const Eigen::MatrixXd g = model.gradients(rows);
    d0 = g.col(j);
    d1 = g.col(p + j);
  } else {
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t ii) {
      const auto i = static_cast<Eigen::Index>(ii);
      std::vector<double> row(static_cast<std::size_t>(2 * p));
      for (Eigen::Index c = 0; c < 2 * p; ++c) row[static_cast<std::size_t>(c)] = rows(i, c);
      const double base = model.predict(row);
      auto& a = row[static_cast<std::size_t>(j)];
      a += b;
      d0[i] = (model.predict(row) - base) / b;
      a = rows(i, j);
      auto& t = row[static_cast<std::size_t>(p + j)];
      t += b;
      d1[i] = (model.predict(row) - base) / b;
    });
  }
  return {d0.array().abs().pow(r).mean(), d1.array().abs().pow(r).mean()};
}

LocalScores mald_categorical(const OutcomeModel& model, const MixedDataset& x, const MixedDataset& xt, int j,
                             double r) {
  require_pair(x, xt);
  if (j < 0 || j >= x.cols()) throw std::out_of_range("feature index out of range");
  if (!x.is_categorical(j)) throw std::invalid_argument("mald_categorical called on a numeric column");
  if (!(r > 0)) throw std::invalid_argument("exponent r must be positive");
  const Eigen::MatrixXd rows = natural_rows(x, xt);
  const Eigen::Index n = rows.rows(), p = x.cols();
  const int K = x.column(j).levels;
  Eigen::VectorXd s0(n), s1(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    std::vector<double> row(static_cast<std::size_t>(2 * p));
    for (Eigen::Index c = 0; c < 2 * p; ++c) row[static_cast<std::size_t>(c)] = rows(i, c);
    std::vector<double> preds(static_cast<std::size_t>(K));
    for (const Eigen::Index col : {static_cast<Eigen::Index>(j), p + j}) {
      const double saved = row[static_cast<std::size_t>(col)];
      for (int k = 1; k <= K; ++k) {
        row[static_cast<std::size_t>(col)] = k;
        preds[static_cast<std::size_t>(k - 1)] = model.predict(row);
      }
      row[static_cast<std::size_t>(col)] = saved;
      (col == j ? s0 : s1)[i] = categorical_local_score(preds);
    }
  });
  return {s0.array().pow(r).mean(), s1.array().pow(r).mean()};
}

std::unique_ptr<OutcomeModel> fit_mald_model(const Eigen::VectorXd& y, const MixedDataset& x, const MixedDataset& xt,
                                             const MaldOptions& options) {
  if (y.size() != x.rows()) throw std::invalid_argument("response length differs from the number of rows");
  if (!y.allFinite()) throw DataError("response contains non-finite values");
  const AugmentedDesign aug = augment(x, xt);
  const Eigen::VectorXd yc = y.array() - y.mean();
  auto map = natural_to_design(aug);
  const auto specs = feature_specs(aug.data);
  if (options.backend == MaldBackend::Forest) {
    ForestParams params = options.forest;
    params.seed = options.seed;
    Forest forest = fit_forest(aug.data.values(), specs, std::span<const double>(yc.data(), static_cast<std::size_t>(yc.size())),
                               params, Task::regression());
    return std::make_unique<ForestOutcome>(std::move(map), std::move(forest));
  }
  MlpConfig config = options.mlp;
  config.seed = options.seed;
  // Encoder only depends on the specs; build it once to produce the training design.
  MlpOutcome probe(map, specs, Mlp());
  const Eigen::MatrixXd encoded = probe.encode(aug.data.values());
  Mlp mlp = fit_mlp(yc, encoded, config);
  return std::make_unique<MlpOutcome>(std::move(map), specs, std::move(mlp));
}

WStatistics mald_statistics(const Eigen::VectorXd& y, const MixedDataset& x, const MixedDataset& xt,
                            const MaldOptions& options) {
  if (!(options.exponent > 0)) throw std::invalid_argument("exponent r must be positive");
  const auto model = fit_mald_model(y, x, xt, options);
  const double b = options.bandwidth > 0 ? options.bandwidth : std::pow(static_cast<double>(x.rows()), -0.2);
  const bool exact = options.backend == MaldBackend::Mlp;
  WStatistics w;
  w.w.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const LocalScores l = x.is_categorical(j)
                              ? mald_categorical(*model, x, xt, static_cast<int>(j), options.exponent)
                              : mald_numeric(*model, x, xt, static_cast<int>(j), b, options.exponent, exact);
    w.w[j] = l.original - l.knockoff;
  }
  w.method = options.backend == MaldBackend::Forest ? "mald-forest" : "mald-mlp";
  w.feature_names = names_of(x);
  w.seed = options.seed;
  w.bandwidth = exact ? 0.0 : b;
  w.exponent = options.exponent;
  return w;
}

// ---------------------------------------------------------------------------

WStatistics gini_statistics(const Eigen::VectorXd& y, const MixedDataset& x, const MixedDataset& xt,
                            const ForestParams& params) {
  if (y.size() != x.rows()) throw std::invalid_argument("response length differs from the number of rows");
  const AugmentedDesign aug = augment(x, xt);
  const OneHotDesign design = one_hot(aug.data, false);
  const std::vector<FeatureSpec> specs(static_cast<std::size_t>(design.matrix.cols()));
  const Forest forest = fit_forest(design.matrix, specs, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
                                   params, Task::regression());
  WStatistics w = group_difference(aug, design, forest.impurity_importance(), GroupReduction::SumAbs, false);
  w.method = "gini";
  w.feature_names = names_of(x);
  w.seed = params.seed;
  return w;
}

}  // namespace crk
