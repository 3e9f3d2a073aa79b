#include "crk/io.hpp"

#include "crk/errors.hpp"

#include <toml.hpp>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

namespace crk {

namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError("error reading '" + path + "'");
  return ss.str();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string cell_name(std::size_t row, std::size_t col, const std::string& column) {
  // Row numbers are 1-based data rows; the header is line 1 of the file.
  return "row " + std::to_string(row + 1) + ", column " + std::to_string(col + 1) + " ('" + column + "')";
}

// Label order: numeric when every label is a number, else lexicographic.
void sort_labels(std::vector<std::string>& labels) {
  const bool numeric = std::all_of(labels.begin(), labels.end(), [](const std::string& s) { return parse_double(s).has_value(); });
  if (numeric)
    std::stable_sort(labels.begin(), labels.end(),
                     [](const std::string& a, const std::string& b) { return *parse_double(a) < *parse_double(b); });
  else
    std::sort(labels.begin(), labels.end());
}

}  // namespace

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::size_t> record_line;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false, field_started = false, any = false;
  std::size_t line = 1, start_line = 1;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    // Blank lines are skipped.
    if (!(record.size() == 1 && record[0].empty())) {
      records.push_back(std::move(record));
      record_line.push_back(start_line);
    }
    record.clear();
    any = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (!any) {
      start_line = line;
      any = true;
    }
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !trim(field).empty())
          throw DataError("CSV line " + std::to_string(line) + ": quote inside an unquoted field");
        field.clear();
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        end_record();
        ++line;
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (in_quotes) throw DataError("CSV line " + std::to_string(start_line) + ": unterminated quoted field");
  if (any) end_record();

  if (records.empty()) throw DataError("CSV has no header");
  CsvTable t;
  t.header = std::move(records[0]);
  for (auto& h : t.header) h = std::string(trim(h));
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      throw DataError("CSV line " + std::to_string(record_line[r]) + ": expected " + std::to_string(t.header.size()) +
                      " fields, found " + std::to_string(records[r].size()));
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

CsvTable read_csv(const std::string& path) {
  try {
    return parse_csv(slurp(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string format_csv(const CsvTable& table) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) out += ',';
      out += quote_field(row[k]);
    }
    out += '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
  return out;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw DataError("error writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw DataError("cannot move output into place at '" + path + "'");
  }
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------------------

std::vector<ColumnSchema> parse_schema(std::string_view toml_text) {
  toml::table doc;
  try {
    doc = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw DataError("schema line " + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
  }
  const auto* columns = doc["column"].as_array();
  if (!columns) throw DataError("schema has no [[column]] entries");
  std::vector<ColumnSchema> schema;
  std::set<std::string> names;
  for (std::size_t k = 0; k < columns->size(); ++k) {
    const auto* entry = columns->get(k)->as_table();
    const std::string where = "schema column " + std::to_string(k + 1);
    if (!entry) throw DataError(where + " is not a table");
    const auto name = (*entry)["name"].value<std::string>();
    if (!name || name->empty()) throw DataError(where + " needs a name");
    if (!names.insert(*name).second) throw DataError("schema lists column '" + *name + "' twice");
    const std::string kind = (*entry)["kind"].value_or(std::string("numeric"));
    if (kind == "numeric") {
      if (entry->contains("levels")) throw DataError("numeric column '" + *name + "' cannot declare levels");
      schema.push_back(ColumnSchema::numeric(*name));
    } else if (kind == "categorical") {
      ColumnSchema c;
      c.name = *name;
      c.kind = ColumnKind::Categorical;
      const auto levels = (*entry)["levels"];
      if (const auto* arr = levels.as_array()) {
        for (const auto& v : *arr) {
          if (auto s = v.value<std::string>()) c.labels.push_back(*s);
          else if (auto i = v.value<std::int64_t>()) c.labels.push_back(std::to_string(*i));
          else throw DataError("levels of '" + *name + "' must be strings or integers");
        }
        if (std::set<std::string>(c.labels.begin(), c.labels.end()).size() != c.labels.size())
          throw DataError("levels of '" + *name + "' are not unique");
        c.levels = static_cast<int>(c.labels.size());
        if (c.levels < 2) throw DataError("categorical column '" + *name + "' needs at least 2 levels");
      } else if (auto count = levels.value<std::int64_t>()) {
        if (*count < 2) throw DataError("categorical column '" + *name + "' needs at least 2 levels");
        c.levels = static_cast<int>(*count);  // labels resolved from the data
      } else if (levels) {
        throw DataError("levels of '" + *name + "' must be an array or a count");
      }
      schema.push_back(std::move(c));
    } else {
      throw DataError("column '" + *name + "' has unknown kind '" + kind + "'");
    }
  }
  return schema;
}

std::vector<ColumnSchema> read_schema(const std::string& path) {
  try {
    return parse_schema(slurp(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

MixedDataset dataset_from_table(const CsvTable& table, const std::optional<std::vector<ColumnSchema>>& declared) {
  const std::size_t p = table.header.size(), n = table.rows.size();
  if (p == 0) throw DataError("CSV has no columns");
  if (n < 2) throw DataError("dataset needs at least 2 rows");
  if (std::set<std::string>(table.header.begin(), table.header.end()).size() != p)
    throw DataError("CSV header has duplicate column names");
  if (declared) {
    if (declared->size() != p) throw DataError("schema lists " + std::to_string(declared->size()) + " columns, CSV has " + std::to_string(p));
    for (std::size_t j = 0; j < p; ++j)
      if ((*declared)[j].name != table.header[j])
        throw DataError("schema column " + std::to_string(j + 1) + " is '" + (*declared)[j].name + "' but the CSV header has '" + table.header[j] + "'");
  }

  Eigen::MatrixXd values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  std::vector<ColumnSchema> schema;
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    for (std::size_t i = 0; i < n; ++i)
      if (trim(table.rows[i][j]).empty()) throw DataError("missing value at " + cell_name(i, j, table.header[j]));

    ColumnSchema c;
    if (declared) {
      c = (*declared)[j];
    } else {
      bool numeric = true;
      for (std::size_t i = 0; i < n && numeric; ++i) numeric = parse_double(table.rows[i][j]).has_value();
      c.name = table.header[j];
      c.kind = numeric ? ColumnKind::Numeric : ColumnKind::Categorical;
    }

    if (!c.is_categorical()) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = parse_double(table.rows[i][j]);
        if (!v) throw DataError("not a number at " + cell_name(i, j, table.header[j]) + ": '" + table.rows[i][j] + "'");
        if (!std::isfinite(*v)) throw DataError("non-finite value at " + cell_name(i, j, table.header[j]));
        values(static_cast<Eigen::Index>(i), col) = *v;
      }
      schema.push_back(ColumnSchema::numeric(c.name));
      continue;
    }

    if (c.labels.empty()) {
      std::set<std::string> seen;
      for (std::size_t i = 0; i < n; ++i) seen.insert(std::string(trim(table.rows[i][j])));
      std::vector<std::string> labels(seen.begin(), seen.end());
      sort_labels(labels);
      if (c.levels > 0) {
        if (static_cast<int>(labels.size()) > c.levels)
          throw DataError("column '" + c.name + "' has " + std::to_string(labels.size()) + " distinct labels but declares " +
                          std::to_string(c.levels) + " levels");
        // A declared count with integer codes 1..K keeps the codes as levels.
        bool codes = true;
        for (const auto& l : labels) {
          const auto v = parse_double(l);
          codes = codes && v && *v == std::round(*v) && *v >= 1 && *v <= c.levels && l == std::to_string(static_cast<int>(*v));
        }
        if (codes) {
          labels.clear();
          for (int k = 1; k <= c.levels; ++k) labels.push_back(std::to_string(k));
        } else {
          for (int k = static_cast<int>(labels.size()) + 1; k <= c.levels; ++k) labels.push_back("unobserved" + std::to_string(k));
        }
      }
      if (labels.size() < 2) throw DataError("categorical column '" + c.name + "' has fewer than 2 levels");
      c.labels = std::move(labels);
      c.levels = static_cast<int>(c.labels.size());
    }
    std::map<std::string, int> code;
    for (std::size_t k = 0; k < c.labels.size(); ++k) code[c.labels[k]] = static_cast<int>(k) + 1;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string label(trim(table.rows[i][j]));
      const auto it = code.find(label);
      if (it == code.end()) throw DataError("unknown level '" + label + "' at " + cell_name(i, j, table.header[j]));
      values(static_cast<Eigen::Index>(i), col) = it->second;
    }
    schema.push_back(ColumnSchema::categorical(c.name, c.labels));
  }
  MixedDataset data(std::move(values), std::move(schema));
  require_valid(data);
  return data;
}

MixedDataset read_dataset(const std::string& csv_path, const std::optional<std::string>& schema_path) {
  std::optional<std::vector<ColumnSchema>> schema;
  if (schema_path) schema = read_schema(*schema_path);
  const CsvTable table = read_csv(csv_path);
  try {
    return dataset_from_table(table, schema);
  } catch (const DataError& e) {
    throw DataError(csv_path + ": " + e.what());
  }
}

MixedDataset read_dataset_like(const std::string& csv_path, const MixedDataset& like) {
  const CsvTable table = read_csv(csv_path);
  try {
    MixedDataset d = dataset_from_table(table, like.schema());
    require_same_schema(like, d);
    return d;
  } catch (const DataError& e) {
    throw DataError(csv_path + ": " + e.what());
  }
}

CsvTable dataset_table(const MixedDataset& data) {
  CsvTable t;
  for (const auto& c : data.schema()) t.header.push_back(c.name);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      const auto& c = data.column(j);
      if (c.is_categorical())
        row.push_back(c.labels[static_cast<std::size_t>(std::lround(data(i, j))) - 1]);
      else
        row.push_back(format_double(data(i, j)));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_dataset(const MixedDataset& data, const std::string& path) {
  write_file_atomic(path, format_csv(dataset_table(data)));
}

void write_knockoffs(const KnockoffMatrix& xt, const std::string& path) { write_dataset(xt.data, path); }

Eigen::VectorXd read_response(const std::string& path, const std::optional<std::string>& column) {
  const CsvTable t = read_csv(path);
  std::size_t j = 0;
  if (column) {
    const auto it = std::find(t.header.begin(), t.header.end(), *column);
    if (it == t.header.end()) throw DataError(path + ": no column named '" + *column + "'");
    j = static_cast<std::size_t>(it - t.header.begin());
  } else if (t.header.size() != 1) {
    throw DataError(path + ": response file has several columns; name one");
  }
  Eigen::VectorXd y(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto v = parse_double(t.rows[i][j]);
    if (!v || !std::isfinite(*v)) throw DataError(path + ": not a finite number at " + cell_name(i, j, t.header[j]));
    y[static_cast<Eigen::Index>(i)] = *v;
  }
  return y;
}

void write_w(const WStatistics& w, const std::string& path) {
  CsvTable t;
  t.header = {"feature", "w", "method"};
  for (Eigen::Index j = 0; j < w.w.size(); ++j) {
    const std::string name = static_cast<std::size_t>(j) < w.feature_names.size() ? w.feature_names[static_cast<std::size_t>(j)]
                                                                                  : "x" + std::to_string(j + 1);
    t.rows.push_back({name, format_double(w.w[j]), w.method});
  }
  write_file_atomic(path, format_csv(t));
}

WStatistics read_w(const std::string& path) {
  const CsvTable t = read_csv(path);
  const auto col = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - t.header.begin());
  };
  const auto wc = col("w");
  if (!wc) throw DataError(path + ": W file needs a 'w' column");
  const auto fc = col("feature"), mc = col("method");
  WStatistics w;
  w.w.resize(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto v = parse_double(t.rows[i][*wc]);
    if (!v || std::isnan(*v)) throw DataError(path + ": not a number at " + cell_name(i, *wc, "w"));
    w.w[static_cast<Eigen::Index>(i)] = *v;
    w.feature_names.push_back(fc ? t.rows[i][*fc] : "x" + std::to_string(i + 1));
  }
  if (mc && !t.rows.empty()) w.method = t.rows[0][*mc];
  return w;
}

CsvTable selection_table(const SelectionResult& result, const std::vector<std::string>& feature_names) {
  CsvTable t;
  t.header = {"feature", "selected", "threshold", "q"};
  const std::set<int> chosen(result.selected.begin(), result.selected.end());
  for (std::size_t j = 0; j < feature_names.size(); ++j)
    t.rows.push_back({feature_names[j], chosen.count(static_cast<int>(j)) ? "true" : "false",
                      format_double(result.threshold), format_double(result.q)});
  return t;
}

void write_selection(const SelectionResult& result, const std::vector<std::string>& feature_names,
                     const std::string& path) {
  write_file_atomic(path, format_csv(selection_table(result, feature_names)));
}

}  // namespace crk
