#include "crk/data.hpp"

#include "crk/errors.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace crk {

ColumnSchema ColumnSchema::numeric(std::string name) {
  return ColumnSchema{std::move(name), ColumnKind::Numeric, 0, {}};
}

ColumnSchema ColumnSchema::categorical(std::string name, int levels) {
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(std::max(levels, 0)));
  for (int k = 1; k <= levels; ++k) labels.push_back(std::to_string(k));
  return ColumnSchema{std::move(name), ColumnKind::Categorical, levels, std::move(labels)};
}

ColumnSchema ColumnSchema::categorical(std::string name, std::vector<std::string> labels) {
  const int levels = static_cast<int>(labels.size());
  return ColumnSchema{std::move(name), ColumnKind::Categorical, levels, std::move(labels)};
}

MixedDataset::MixedDataset(Eigen::MatrixXd values, std::vector<ColumnSchema> schema)
    : values_(std::move(values)), schema_(std::move(schema)) {
  if (static_cast<std::size_t>(values_.cols()) != schema_.size()) {
    throw std::invalid_argument("dataset has " + std::to_string(values_.cols()) + " columns but schema has " +
                                std::to_string(schema_.size()));
  }
  if (values_.rows() < 2) throw std::invalid_argument("dataset needs at least 2 rows");
  if (values_.cols() < 1) throw std::invalid_argument("dataset needs at least 1 column");
}

MixedDataset MixedDataset::numeric(Eigen::MatrixXd values) {
  std::vector<ColumnSchema> schema;
  for (Eigen::Index j = 0; j < values.cols(); ++j) schema.push_back(ColumnSchema::numeric("x" + std::to_string(j + 1)));
  return MixedDataset(std::move(values), std::move(schema));
}

bool MixedDataset::all_numeric() const {
  for (const auto& c : schema_)
    if (c.is_categorical()) return false;
  return true;
}

std::vector<int> MixedDataset::categorical_columns() const {
  std::vector<int> out;
  for (std::size_t j = 0; j < schema_.size(); ++j)
    if (schema_[j].is_categorical()) out.push_back(static_cast<int>(j));
  return out;
}

MixedDataset MixedDataset::select_columns(std::span<const int> cols) const {
  Eigen::MatrixXd v(rows(), static_cast<Eigen::Index>(cols.size()));
  std::vector<ColumnSchema> s;
  s.reserve(cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] < 0 || cols[k] >= this->cols()) throw std::out_of_range("column index out of range");
    v.col(static_cast<Eigen::Index>(k)) = values_.col(cols[k]);
    s.push_back(schema_[static_cast<std::size_t>(cols[k])]);
  }
  return MixedDataset(std::move(v), std::move(s));
}

MixedDataset MixedDataset::with_values(Eigen::MatrixXd values) const {
  return MixedDataset(std::move(values), schema_);
}

std::vector<Violation> validate(const MixedDataset& dataset) {
  std::vector<Violation> out;
  const auto& x = dataset.values();
  for (Eigen::Index j = 0; j < dataset.cols(); ++j) {
    const auto& col = dataset.column(j);
    if (col.is_categorical()) {
      if (col.levels < 2) {
        out.push_back({-1, j, "categorical column '" + col.name + "' needs at least 2 levels"});
        continue;
      }
      for (Eigen::Index i = 0; i < dataset.rows(); ++i) {
        const double v = x(i, j);
        if (!std::isfinite(v) || v != std::floor(v) || v < 1 || v > col.levels) {
          std::ostringstream msg;
          msg << "value " << v << " is not a level in 1.." << col.levels << " of column '" << col.name << "'";
          out.push_back({i, j, msg.str()});
        }
      }
    } else {
      for (Eigen::Index i = 0; i < dataset.rows(); ++i) {
        if (!std::isfinite(x(i, j))) out.push_back({i, j, "non-finite value in numeric column '" + col.name + "'"});
      }
    }
  }
  return out;
}

void require_valid(const MixedDataset& dataset) {
  const auto violations = validate(dataset);
  if (violations.empty()) return;
  std::ostringstream msg;
  msg << violations.size() << " schema violation(s)";
  for (std::size_t k = 0; k < std::min<std::size_t>(violations.size(), 5); ++k) {
    const auto& v = violations[k];
    msg << "; row " << v.row + 1 << " col " << v.col + 1 << ": " << v.message;
  }
  throw DataError(msg.str());
}

void require_same_schema(const MixedDataset& a, const MixedDataset& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DataError("datasets differ in shape");
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const auto& ca = a.column(j);
    const auto& cb = b.column(j);
    if (ca.kind != cb.kind || ca.levels != cb.levels) {
      throw DataError("column " + std::to_string(j + 1) + " differs in schema ('" + ca.name + "' vs '" + cb.name + "')");
    }
  }
}

std::pair<MixedDataset, KnockoffMatrix> swap_columns(const MixedDataset& x, const KnockoffMatrix& xt,
                                                     std::span<const int> swap_set) {
  require_same_schema(x, xt.data);
  Eigen::MatrixXd a = x.values();
  Eigen::MatrixXd b = xt.values();
  for (int j : swap_set) {
    if (j < 0 || j >= x.cols()) throw std::out_of_range("swap index " + std::to_string(j) + " out of range");
    a.col(j).swap(b.col(j));
  }
  // A column listed twice is swapped twice, i.e. left in place.
  return {x.with_values(std::move(a)), KnockoffMatrix{xt.data.with_values(std::move(b)), xt.generator, xt.seed}};
}

MixedDataset hconcat(const MixedDataset& a, const MixedDataset& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("hconcat: row counts differ");
  Eigen::MatrixXd v(a.rows(), a.cols() + b.cols());
  v << a.values(), b.values();
  auto schema = a.schema();
  schema.insert(schema.end(), b.schema().begin(), b.schema().end());
  return MixedDataset(std::move(v), std::move(schema));
}

OneHotDesign one_hot(const MixedDataset& dataset, bool drop_first) {
  OneHotDesign out;
  Eigen::Index width = 0;
  for (Eigen::Index j = 0; j < dataset.cols(); ++j) {
    const auto& c = dataset.column(j);
    width += c.is_categorical() ? (drop_first ? c.levels - 1 : c.levels) : 1;
  }
  out.matrix.setZero(dataset.rows(), width);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < dataset.cols(); ++j) {
    const auto& c = dataset.column(j);
    if (!c.is_categorical()) {
      out.matrix.col(k++) = dataset.values().col(j);
      out.source_column.push_back(static_cast<int>(j));
      continue;
    }
    const int first = drop_first ? 2 : 1;
    for (int level = first; level <= c.levels; ++level) {
      for (Eigen::Index i = 0; i < dataset.rows(); ++i) out.matrix(i, k) = dataset(i, j) == level ? 1.0 : 0.0;
      out.source_column.push_back(static_cast<int>(j));
      ++k;
    }
  }
  return out;
}

}  // namespace crk
