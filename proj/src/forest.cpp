#include "crk/forest.hpp"

#include "crk/parallel.hpp"
#include "crk/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace crk {

namespace {

constexpr int kMaxSubsetLevels = 8;

struct Split {
  int feature = -1;
  bool categorical = false;
  double threshold = 0.0;
  std::uint64_t left_levels = 0;
  double score = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& x, std::span<const FeatureSpec> specs, std::span<const double> y,
              std::span<const int> classes, const ForestParams& params, const Task& task, Rng rng)
      : x_(x), specs_(specs), y_(y), classes_(classes), params_(params), task_(task), rng_(std::move(rng)) {
    importance_ = Eigen::VectorXd::Zero(x.cols());
    pool_.resize(static_cast<std::size_t>(x.cols()));
    std::iota(pool_.begin(), pool_.end(), 0);
  }

  // Grows one tree on the bootstrap sample; returns the tree and fills oob rows.
  Tree grow(std::vector<int>& oob) {
    const int n = static_cast<int>(x_.rows());
    std::vector<int> in_bag(static_cast<std::size_t>(n), 0);
    std::uniform_int_distribution<int> draw(0, n - 1);
    samples_.resize(static_cast<std::size_t>(n));
    for (auto& s : samples_) {
      s = draw(rng_);
      ++in_bag[static_cast<std::size_t>(s)];
    }
    oob.clear();
    for (int i = 0; i < n; ++i)
      if (in_bag[static_cast<std::size_t>(i)] == 0) oob.push_back(i);

    struct Pending {
      int node, start, end, depth;
    };
    std::vector<Pending> stack{{0, 0, n, 0}};
    nodes_.assign(1, Tree::Node{});
    while (!stack.empty()) {
      const Pending cur = stack.back();
      stack.pop_back();
      Split split;
      const bool can_split = cur.end - cur.start > params_.min_node_size &&
                             (!params_.max_depth || cur.depth < *params_.max_depth) && find_split(cur.start, cur.end, split);
      if (!can_split) {
        make_leaf(cur.node, cur.start, cur.end);
        continue;
      }
      const auto first = samples_.begin() + cur.start;
      const auto last = samples_.begin() + cur.end;
      const auto mid = std::stable_partition(first, last, [&](int s) { return goes_left(split, s); });
      const int mid_index = static_cast<int>(mid - samples_.begin());

      const int left = static_cast<int>(nodes_.size());
      nodes_.push_back(Tree::Node{});
      nodes_.push_back(Tree::Node{});
      auto& node = nodes_[static_cast<std::size_t>(cur.node)];
      node.feature = split.feature;
      node.categorical = split.categorical;
      node.threshold = split.threshold;
      node.left_levels = split.left_levels;
      node.left = left;
      node.right = left + 1;
      stack.push_back({left + 1, mid_index, cur.end, cur.depth + 1});
      stack.push_back({left, cur.start, mid_index, cur.depth + 1});
    }
    return Tree(std::move(nodes_), std::move(leaves_), width());
  }

  const Eigen::VectorXd& importance() const { return importance_; }

 private:
  int width() const { return task_.is_classification() ? task_.classes : 1; }

  bool goes_left(const Split& split, int s) const {
    const double v = x_(s, split.feature);
    if (split.categorical) return (split.left_levels >> (static_cast<int>(v) - 1)) & 1U;
    return v <= split.threshold;
  }

  void make_leaf(int node, int start, int end) {
    auto& nd = nodes_[static_cast<std::size_t>(node)];
    nd.feature = -1;
    nd.leaf = static_cast<int>(leaves_.size()) / width();
    const double count = end - start;
    if (task_.is_classification()) {
      std::vector<double> freq(static_cast<std::size_t>(task_.classes), 0.0);
      for (int k = start; k < end; ++k) freq[static_cast<std::size_t>(classes_[samples_[k]])] += 1.0;
      for (double f : freq) leaves_.push_back(f / count);
    } else {
      double sum = 0.0;
      for (int k = start; k < end; ++k) sum += y_[samples_[k]];
      leaves_.push_back(sum / count);
    }
  }

  // Parent score: sum^2/n (regression) or sum_k c_k^2/n (classification).
  // A split's score is the same quantity summed over children; the impurity
  // decrease is the difference.
  bool find_split(int start, int end, Split& best) {
    const int m = end - start;
    double parent = 0.0;
    if (task_.is_classification()) {
      counts_.assign(static_cast<std::size_t>(task_.classes), 0.0);
      for (int k = start; k < end; ++k) counts_[static_cast<std::size_t>(classes_[samples_[k]])] += 1.0;
      int nonzero = 0;
      for (double c : counts_) {
        parent += c * c;
        nonzero += c > 0;
      }
      parent /= m;
      if (nonzero <= 1) return false;
    } else {
      double sum = 0.0, lo = y_[samples_[start]], hi = lo;
      for (int k = start; k < end; ++k) {
        const double v = y_[samples_[k]];
        sum += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (lo == hi) return false;
      parent = sum * sum / m;
    }

    const int p = static_cast<int>(x_.cols());
    if (p == 0) return false;
    const int mtry = std::min(params_.mtry, p);
    for (int k = 0; k < mtry; ++k) {
      std::uniform_int_distribution<int> pick(k, p - 1);
      std::swap(pool_[static_cast<std::size_t>(k)], pool_[static_cast<std::size_t>(pick(rng_))]);
    }
    // Evaluate candidates in ascending column order so ties resolve the same
    // way whatever order they were drawn in.
    std::vector<int> candidates(pool_.begin(), pool_.begin() + mtry);
    std::sort(candidates.begin(), candidates.end());

    best = Split{};
    best.score = parent + 1e-12 * (1.0 + std::abs(parent));
    bool found = false;
    for (int f : candidates) {
      const auto& spec = specs_[static_cast<std::size_t>(f)];
      const bool subset = spec.categorical && spec.levels <= kMaxSubsetLevels;
      found |= subset ? categorical_split(f, spec.levels, start, end, best) : numeric_split(f, start, end, best);
    }
    if (found) importance_[best.feature] += best.score - parent;
    return found;
  }

  double class_score(const std::vector<double>& left, double n_left, const std::vector<double>& total, double n) const {
    double l = 0.0, r = 0.0;
    for (std::size_t c = 0; c < left.size(); ++c) {
      l += left[c] * left[c];
      const double rc = total[c] - left[c];
      r += rc * rc;
    }
    return l / n_left + r / (n - n_left);
  }

  bool numeric_split(int f, int start, int end, Split& best) {
    order_.clear();
    for (int k = start; k < end; ++k) order_.emplace_back(x_(samples_[k], f), samples_[k]);
    std::sort(order_.begin(), order_.end());
    const int m = end - start;
    if (order_.front().first == order_.back().first) return false;

    bool found = false;
    if (task_.is_classification()) {
      left_counts_.assign(counts_.size(), 0.0);
      for (int i = 0; i + 1 < m; ++i) {
        left_counts_[static_cast<std::size_t>(classes_[order_[i].second])] += 1.0;
        if (order_[i].first == order_[i + 1].first) continue;
        const double score = class_score(left_counts_, i + 1, counts_, m);
        if (score > best.score) {
          set_numeric(best, f, i, score);
          found = true;
        }
      }
    } else {
      double total = 0.0;
      for (const auto& [v, s] : order_) total += y_[s];
      double left = 0.0;
      for (int i = 0; i + 1 < m; ++i) {
        left += y_[order_[i].second];
        if (order_[i].first == order_[i + 1].first) continue;
        const double nl = i + 1, nr = m - nl, right = total - left;
        const double score = left * left / nl + right * right / nr;
        if (score > best.score) {
          set_numeric(best, f, i, score);
          found = true;
        }
      }
    }
    return found;
  }

  void set_numeric(Split& best, int f, int i, double score) const {
    const double a = order_[i].first, b = order_[i + 1].first;
    double mid = a + (b - a) / 2.0;
    if (!(mid >= a && mid < b)) mid = a;
    best = Split{f, false, mid, 0, score};
  }

  bool categorical_split(int f, int levels, int start, int end, Split& best) {
    const auto K = static_cast<std::size_t>(levels);
    const std::size_t C = task_.is_classification() ? counts_.size() : 1;
    std::vector<double> n_level(K, 0.0), stat(K * C, 0.0);
    for (int k = start; k < end; ++k) {
      const int s = samples_[k];
      const auto level = static_cast<std::size_t>(x_(s, f)) - 1;
      n_level[level] += 1.0;
      if (task_.is_classification())
        stat[level * C + static_cast<std::size_t>(classes_[s])] += 1.0;
      else
        stat[level] += y_[s];
    }
    std::vector<int> present;
    for (std::size_t l = 0; l < K; ++l)
      if (n_level[l] > 0) present.push_back(static_cast<int>(l));
    if (present.size() < 2) return false;

    // Order levels by mean response or by the rate of the first class.
    auto key = [&](int l) {
      const auto u = static_cast<std::size_t>(l);
      return stat[u * C] / n_level[u];
    };
    std::stable_sort(present.begin(), present.end(), [&](int a, int b) { return key(a) < key(b); });

    const double m = end - start;
    double n_left = 0.0;
    std::uint64_t mask = 0;
    bool found = false;
    std::vector<double> left(C, 0.0);
    double total_sum = 0.0;
    for (double v : stat) total_sum += v;
    for (std::size_t t = 0; t + 1 < present.size(); ++t) {
      const auto l = static_cast<std::size_t>(present[t]);
      mask |= std::uint64_t{1} << l;
      n_left += n_level[l];
      for (std::size_t c = 0; c < C; ++c) left[c] += stat[l * C + c];
      double score;
      if (task_.is_classification()) {
        score = class_score(left, n_left, counts_, m);
      } else {
        const double right = total_sum - left[0];
        score = left[0] * left[0] / n_left + right * right / (m - n_left);
      }
      if (score > best.score) {
        best = Split{f, true, 0.0, mask, score};
        found = true;
      }
    }
    return found;
  }

  const Eigen::MatrixXd& x_;
  std::span<const FeatureSpec> specs_;
  std::span<const double> y_;
  std::span<const int> classes_;
  const ForestParams& params_;
  const Task& task_;
  Rng rng_;

  std::vector<int> samples_;
  std::vector<int> pool_;
  std::vector<Tree::Node> nodes_;
  std::vector<double> leaves_;
  std::vector<double> counts_, left_counts_;
  std::vector<std::pair<double, int>> order_;
  Eigen::VectorXd importance_;
};

}  // namespace

std::vector<FeatureSpec> feature_specs(const MixedDataset& dataset) {
  std::vector<FeatureSpec> out;
  for (const auto& c : dataset.schema()) out.push_back({c.is_categorical(), c.levels});
  return out;
}

ForestParams resolve_params(const ForestParams& params, const Task& task, int n_features) {
  ForestParams out = params;
  if (out.n_trees < 1) throw std::invalid_argument("n_trees must be >= 1");
  if (out.mtry <= 0) {
    out.mtry = task.is_classification() ? static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_features))))
                                        : n_features / 3;
  }
  out.mtry = std::clamp(out.mtry, 1, std::max(1, n_features));
  if (out.min_node_size <= 0) out.min_node_size = task.is_classification() ? 1 : 5;
  if (out.max_depth && *out.max_depth < 0) throw std::invalid_argument("max_depth must be >= 0");
  return out;
}

Tree::Tree(std::vector<Node> nodes, std::vector<double> leaf_values, int width)
    : nodes_(std::move(nodes)), leaf_values_(std::move(leaf_values)), width_(width) {}

Tree Tree::single_leaf(std::vector<double> value) {
  const int width = static_cast<int>(value.size());
  Node leaf;
  leaf.leaf = 0;
  return Tree({leaf}, std::move(value), width);
}

template <typename Get>
int Tree::find_leaf(Get&& get) const {
  int k = 0;
  for (;;) {
    const Node& nd = nodes_[static_cast<std::size_t>(k)];
    if (nd.feature < 0) return nd.leaf;
    const double v = get(nd.feature);
    bool left;
    if (nd.categorical) {
      const int level = static_cast<int>(v);
      left = level >= 1 && level <= 64 && ((nd.left_levels >> (level - 1)) & 1U);
    } else {
      left = v <= nd.threshold;
    }
    k = left ? nd.left : nd.right;
  }
}

std::span<const double> Tree::leaf_value(std::span<const double> row) const {
  const int leaf = find_leaf([&](int f) { return row[static_cast<std::size_t>(f)]; });
  return {leaf_values_.data() + static_cast<std::ptrdiff_t>(leaf) * width_, static_cast<std::size_t>(width_)};
}

std::span<const double> Tree::leaf_value(const Eigen::MatrixXd& x, Eigen::Index row) const {
  const int leaf = find_leaf([&](int f) { return x(row, f); });
  return {leaf_values_.data() + static_cast<std::ptrdiff_t>(leaf) * width_, static_cast<std::size_t>(width_)};
}

Forest::Forest(Task task, int n_features, std::vector<Tree> trees)
    : task_(task), n_features_(n_features), trees_(std::move(trees)) {
  if (trees_.empty()) throw std::invalid_argument("forest needs at least one tree");
  oob_index_.resize(trees_.size());
  importance_ = Eigen::VectorXd::Zero(n_features);
}

void Forest::check_row(std::span<const double> row) const {
  if (static_cast<int>(row.size()) != n_features_) {
    throw std::invalid_argument("row has " + std::to_string(row.size()) + " features, forest expects " +
                                std::to_string(n_features_));
  }
}

double Forest::predict(std::span<const double> row) const {
  check_row(row);
  if (task_.is_classification()) {
    const Eigen::VectorXd p = predict_proba(row);
    double e = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) e += static_cast<double>(k + 1) * p[k];
    return e;
  }
  double sum = 0.0;
  for (const auto& t : trees_) sum += t.leaf_value(row)[0];
  return sum / static_cast<double>(trees_.size());
}

Eigen::VectorXd Forest::predict(const Eigen::MatrixXd& x) const {
  if (x.cols() != n_features_) throw std::invalid_argument("feature matrix has wrong column count");
  Eigen::VectorXd out(x.rows());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
    out[i] = predict(row);
  }
  return out;
}

Eigen::VectorXd Forest::predict_proba(std::span<const double> row) const {
  if (!task_.is_classification()) throw std::logic_error("predict_proba called on a regression forest");
  check_row(row);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(task_.classes);
  for (const auto& t : trees_) {
    const auto leaf = t.leaf_value(row);
    for (int k = 0; k < task_.classes; ++k) p[k] += leaf[static_cast<std::size_t>(k)];
  }
  return p / static_cast<double>(trees_.size());
}

Eigen::MatrixXd Forest::predict_proba(const Eigen::MatrixXd& x) const {
  if (!task_.is_classification()) throw std::logic_error("predict_proba called on a regression forest");
  Eigen::MatrixXd out(x.rows(), task_.classes);
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
    out.row(i) = predict_proba(row).transpose();
  }
  return out;
}

OobPrediction Forest::oob_predict(const Eigen::MatrixXd& training_features) const {
  if (training_features.cols() != n_features_) throw std::invalid_argument("feature matrix has wrong column count");
  const Eigen::Index n = training_features.rows();
  const int width = task_.is_classification() ? task_.classes : 1;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, width);
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    for (int i : oob_index_[t]) {
      if (i >= n) throw std::invalid_argument("out-of-bag index beyond the supplied rows");
      const auto leaf = trees_[t].leaf_value(training_features, i);
      for (int k = 0; k < width; ++k) sum(i, k) += leaf[static_cast<std::size_t>(k)];
      ++count[static_cast<std::size_t>(i)];
    }
  }

  OobPrediction out;
  out.fallback.assign(static_cast<std::size_t>(n), false);
  std::vector<double> row(static_cast<std::size_t>(n_features_));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = count[static_cast<std::size_t>(i)];
    if (c > 0) {
      sum.row(i) /= static_cast<double>(c);
      continue;
    }
    out.fallback[static_cast<std::size_t>(i)] = true;
    for (int j = 0; j < n_features_; ++j) row[static_cast<std::size_t>(j)] = training_features(i, j);
    if (task_.is_classification())
      sum.row(i) = predict_proba(row).transpose();
    else
      sum(i, 0) = predict(row);
  }
  if (task_.is_classification())
    out.proba = std::move(sum);
  else
    out.value = sum.col(0);
  return out;
}

Forest fit_forest(const Eigen::MatrixXd& features, std::span<const FeatureSpec> specs, std::span<const double> target,
                  const ForestParams& params, const Task& task) {
  const auto n = features.rows();
  const int p = static_cast<int>(features.cols());
  if (static_cast<Eigen::Index>(target.size()) != n) throw std::invalid_argument("target length differs from rows");
  if (static_cast<int>(specs.size()) != p) throw std::invalid_argument("feature spec count differs from columns");
  if (n < 2) throw std::invalid_argument("forest needs at least 2 rows");
  for (int j = 0; j < p; ++j) {
    if (specs[static_cast<std::size_t>(j)].categorical && specs[static_cast<std::size_t>(j)].levels > 64)
      throw std::invalid_argument("categorical features are limited to 64 levels");
  }
  const ForestParams resolved = resolve_params(params, task, p);

  std::vector<int> classes;
  if (task.is_classification()) {
    if (task.classes < 2) throw std::invalid_argument("classification needs at least 2 classes");
    classes.resize(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double v = target[i];
      if (v != std::floor(v) || v < 1 || v > task.classes)
        throw std::invalid_argument("classification target must hold levels 1..K");
      classes[i] = static_cast<int>(v) - 1;
    }
  } else {
    for (double v : target)
      if (!std::isfinite(v)) throw std::invalid_argument("regression target must be finite");
  }

  Forest forest;
  forest.task_ = task;
  forest.n_features_ = p;
  const auto T = static_cast<std::size_t>(resolved.n_trees);
  forest.trees_.resize(T);
  forest.oob_index_.resize(T);
  std::vector<Eigen::VectorXd> importance(T);
  parallel_for(T, [&](std::size_t t) {
    TreeBuilder builder(features, specs, target, classes, resolved, task,
                        make_rng(resolved.seed, {stream::kForestTree, t}));
    forest.trees_[t] = builder.grow(forest.oob_index_[t]);
    importance[t] = builder.importance();
  });
  forest.importance_ = Eigen::VectorXd::Zero(p);
  for (const auto& imp : importance) forest.importance_ += imp;
  return forest;
}

Forest fit_forest(const MixedDataset& features, std::span<const double> target, const ForestParams& params,
                  const Task& task) {
  const auto specs = feature_specs(features);
  return fit_forest(features.values(), specs, target, params, task);
}

}  // namespace crk
