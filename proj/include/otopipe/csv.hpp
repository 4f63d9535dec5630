#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace otopipe::csv {

// One parsed data row with its 1-based source line number.
struct Row {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

// Comma-separated table with a header row. Fields may be double-quoted
// ("" escapes a quote); embedded newlines are not supported. Surrounding
// whitespace is trimmed from unquoted fields. Blank lines and lines starting
// with '#' are skipped.
class Table {
 public:
  static Table read(const std::filesystem::path& path);
  static Table parse(std::istream& in, std::string source_name);

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<Row>& rows() const { return rows_; }
  const std::string& source() const { return source_; }

  // Column index of `name` (case-insensitive), or nullopt.
  std::optional<std::size_t> column(std::string_view name) const;
  // Like column() but throws DataError naming the file when absent.
  std::size_t require_column(std::string_view name) const;

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::vector<Row> rows_;
};

std::vector<std::string> split_line(std::string_view line, char delim = ',');

// Quotes a field only when it contains a delimiter, quote or leading/trailing
// whitespace.
std::string quote(std::string_view field);

double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

}  // namespace otopipe::csv
