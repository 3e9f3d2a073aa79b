#pragma once

#include "crk/data.hpp"
#include "crk/filter.hpp"
#include "crk/importance.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace crk {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// RFC 4180 style: comma separated, optional double quotes with "" escapes,
/// LF or CRLF line ends, header required. Throws DataError with the line
/// number on malformed input.
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::string& path);
std::string format_csv(const CsvTable& table);

/// Writes to a temporary sibling and renames, so readers never observe a
/// partial file. Throws DataError on IO failure.
void write_file_atomic(const std::string& path, const std::string& content);

/// 17 significant digits; infinities as "inf" / "-inf".
std::string format_double(double v);
/// Strict number parse (surrounding blanks allowed); nullopt if not a number.
std::optional<double> parse_double(std::string_view text);

/// Schema file (TOML):
///   [[column]]
///   name = "tissue"
///   kind = "categorical"       # or "numeric"
///   levels = ["blood", "liver"] # optional; or an integer count
std::vector<ColumnSchema> read_schema(const std::string& path);
std::vector<ColumnSchema> parse_schema(std::string_view toml_text);

/// Reads a headered CSV. Without a schema, a column is numeric when every
/// cell parses as a number and categorical otherwise. Categorical labels are
/// mapped to levels in sorted order (numeric order when every label is a
/// number, else lexicographic) unless the schema lists them.
MixedDataset read_dataset(const std::string& csv_path, const std::optional<std::string>& schema_path = {});
MixedDataset dataset_from_table(const CsvTable& table, const std::optional<std::vector<ColumnSchema>>& schema);

/// Reads a CSV that must match `like` exactly: same header and, for
/// categorical columns, labels drawn from the same label set.
MixedDataset read_dataset_like(const std::string& csv_path, const MixedDataset& like);

CsvTable dataset_table(const MixedDataset& data);
void write_dataset(const MixedDataset& data, const std::string& path);
void write_knockoffs(const KnockoffMatrix& xt, const std::string& path);

/// Response vector: the named column, or the only column of the file.
Eigen::VectorXd read_response(const std::string& path, const std::optional<std::string>& column = {});

/// Columns feature,w,method.
void write_w(const WStatistics& w, const std::string& path);
WStatistics read_w(const std::string& path);

/// One row per feature: feature,selected,threshold,q.
CsvTable selection_table(const SelectionResult& result, const std::vector<std::string>& feature_names);
void write_selection(const SelectionResult& result, const std::vector<std::string>& feature_names,
                     const std::string& path);

}  // namespace crk
