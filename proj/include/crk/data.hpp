#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace crk {

enum class ColumnKind { Numeric, Categorical };

/// Schema for one column. Categorical values are stored as 1-based level
/// codes; `labels[k - 1]` is the external label of level k.
struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  int levels = 0;
  std::vector<std::string> labels;

  static ColumnSchema numeric(std::string name);
  /// Categorical column with labels "1".."K".
  static ColumnSchema categorical(std::string name, int levels);
  static ColumnSchema categorical(std::string name, std::vector<std::string> labels);

  bool is_categorical() const { return kind == ColumnKind::Categorical; }
  bool operator==(const ColumnSchema&) const = default;
};

/// Immutable n x p table of mixed numeric / categorical columns.
class MixedDataset {
 public:
  MixedDataset() = default;
  /// Throws std::invalid_argument if the shape disagrees with the schema,
  /// n < 2 or p < 1. Cell values are checked by validate().
  MixedDataset(Eigen::MatrixXd values, std::vector<ColumnSchema> schema);

  /// All-numeric dataset with columns named x1..xp.
  static MixedDataset numeric(Eigen::MatrixXd values);

  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  const Eigen::MatrixXd& values() const { return values_; }
  const std::vector<ColumnSchema>& schema() const { return schema_; }
  const ColumnSchema& column(Eigen::Index j) const { return schema_[static_cast<std::size_t>(j)]; }
  bool is_categorical(Eigen::Index j) const { return column(j).is_categorical(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

  bool all_numeric() const;
  std::vector<int> categorical_columns() const;

  /// New dataset with only the given columns, in the given order.
  MixedDataset select_columns(std::span<const int> cols) const;
  /// New dataset with the same schema and replaced values.
  MixedDataset with_values(Eigen::MatrixXd values) const;

 private:
  Eigen::MatrixXd values_;
  std::vector<ColumnSchema> schema_;
};

/// Conditional residuals; categorical columns are identically zero.
struct ResidualMatrix {
  Eigen::MatrixXd values;
  std::vector<bool> categorical_mask;
};

struct KnockoffMatrix {
  MixedDataset data;
  std::string generator;
  std::uint64_t seed = 0;

  const Eigen::MatrixXd& values() const { return data.values(); }
};

struct Violation {
  Eigen::Index row = -1;  // -1 for schema-level problems
  Eigen::Index col = -1;
  std::string message;
};

std::vector<Violation> validate(const MixedDataset& dataset);

/// Throws DataError describing the first violations if validate() is not empty.
void require_valid(const MixedDataset& dataset);

/// Throws DataError unless both datasets have identical shape and schema.
void require_same_schema(const MixedDataset& a, const MixedDataset& b);

/// Exchanges columns j in S between X and its knockoff. Involution for every S.
std::pair<MixedDataset, KnockoffMatrix> swap_columns(const MixedDataset& x, const KnockoffMatrix& xt,
                                                     std::span<const int> swap_set);

/// Side-by-side concatenation [a, b] (schemas concatenated).
MixedDataset hconcat(const MixedDataset& a, const MixedDataset& b);

/// One-hot layout of a mixed dataset: numeric columns pass through,
/// categorical column j expands to K_j indicator columns (all levels, or
/// levels 2..K when drop_first).
struct OneHotDesign {
  Eigen::MatrixXd matrix;
  std::vector<int> source_column;  // per design column, the dataset column it came from
};

OneHotDesign one_hot(const MixedDataset& dataset, bool drop_first = false);

}  // namespace crk
