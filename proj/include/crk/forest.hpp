#pragma once

#include "crk/data.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace crk {

struct FeatureSpec {
  bool categorical = false;
  int levels = 0;
};

std::vector<FeatureSpec> feature_specs(const MixedDataset& dataset);

struct Task {
  enum class Kind { Regression, Classification };
  Kind kind = Kind::Regression;
  int classes = 0;

  static Task regression() { return {Kind::Regression, 0}; }
  static Task classification(int classes) { return {Kind::Classification, classes}; }
  bool is_classification() const { return kind == Kind::Classification; }
};

/// Zero for mtry / min_node_size means "use the task default":
/// mtry = floor(p/3) (regression) or floor(sqrt(p)) (classification),
/// min_node_size = 5 (regression) or 1 (classification).
struct ForestParams {
  int n_trees = 500;
  int mtry = 0;
  int min_node_size = 0;
  std::optional<int> max_depth;
  std::uint64_t seed = 0;
};

/// Params with defaults filled in for a given task and feature count.
ForestParams resolve_params(const ForestParams& params, const Task& task, int n_features);

/// One binary decision tree stored as a flat node array.
class Tree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    bool categorical = false;
    double threshold = 0.0;          // numeric: left iff x <= threshold
    std::uint64_t left_levels = 0;   // categorical: left iff bit (level - 1) is set
    int left = -1;
    int right = -1;
    int leaf = -1;                   // leaf slot in leaf_values (times width)
  };

  Tree() = default;
  Tree(std::vector<Node> nodes, std::vector<double> leaf_values, int width);

  /// A tree that is one leaf holding `value` (length 1 or K).
  static Tree single_leaf(std::vector<double> value);

  int width() const { return width_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Leaf payload reached by the row (length = width()).
  std::span<const double> leaf_value(std::span<const double> row) const;
  std::span<const double> leaf_value(const Eigen::MatrixXd& x, Eigen::Index row) const;

 private:
  template <typename Get>
  int find_leaf(Get&& get) const;

  std::vector<Node> nodes_;
  std::vector<double> leaf_values_;
  int width_ = 1;
};

struct OobPrediction {
  Eigen::VectorXd value;     // regression: per-row prediction
  Eigen::MatrixXd proba;     // classification: n x K
  std::vector<bool> fallback;  // row was in every tree's bootstrap; full-forest prediction used
};

class Forest {
 public:
  Forest() = default;
  /// Assemble a forest from explicit trees (no out-of-bag bookkeeping).
  Forest(Task task, int n_features, std::vector<Tree> trees);

  const Task& task() const { return task_; }
  int n_features() const { return n_features_; }
  int n_trees() const { return static_cast<int>(trees_.size()); }
  const std::vector<Tree>& trees() const { return trees_; }
  /// Row indices excluded from tree t's bootstrap sample.
  const std::vector<std::vector<int>>& oob_index() const { return oob_index_; }

  /// Regression: mean of the trees' leaf means. Classification: expected level
  /// (sum_k k * P(k)), rarely useful but defined.
  double predict(std::span<const double> row) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;

  /// Mean of the trees' leaf frequency vectors; throws std::logic_error on a
  /// regression forest.
  Eigen::VectorXd predict_proba(std::span<const double> row) const;
  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x) const;

  /// Out-of-bag prediction for the training rows.
  OobPrediction oob_predict(const Eigen::MatrixXd& training_features) const;

  /// Total impurity decrease per feature (sum of squares for regression,
  /// size-weighted Gini for classification), summed over trees.
  const Eigen::VectorXd& impurity_importance() const { return importance_; }

 private:
  friend Forest fit_forest(const Eigen::MatrixXd&, std::span<const FeatureSpec>, std::span<const double>,
                           const ForestParams&, const Task&);

  void check_row(std::span<const double> row) const;

  Task task_;
  int n_features_ = 0;
  std::vector<Tree> trees_;
  std::vector<std::vector<int>> oob_index_;
  Eigen::VectorXd importance_;
};

/// Grows a random forest: per-tree bootstrap drawn from a stream keyed by
/// (seed, tree index), mtry candidate features per node, variance-reduction
/// (regression) or Gini (classification) splits. Categorical features with
/// K <= 8 levels use ordered level-subset splits; larger K split on the level
/// code. Classification targets hold levels 1..K. Feature matrices may have
/// zero columns, in which case every tree is a single leaf.
Forest fit_forest(const Eigen::MatrixXd& features, std::span<const FeatureSpec> specs, std::span<const double> target,
                  const ForestParams& params, const Task& task);

Forest fit_forest(const MixedDataset& features, std::span<const double> target, const ForestParams& params,
                  const Task& task);

}  // namespace crk
