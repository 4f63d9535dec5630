#include "otopipe/csv.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>

#include <fmt/core.h>

#include "otopipe/error.hpp"

namespace otopipe::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

std::vector<std::string> split_line(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t i = 0;
  for (;;) {
    std::string field;
    // Skip leading blanks to find an opening quote.
    std::size_t j = i;
    while (j < line.size() && (line[j] == ' ' || line[j] == '\t') && line[j] != delim) ++j;
    if (j < line.size() && line[j] == '"') {
      ++j;
      bool closed = false;
      while (j < line.size()) {
        if (line[j] == '"') {
          if (j + 1 < line.size() && line[j + 1] == '"') {
            field.push_back('"');
            j += 2;
          } else {
            ++j;
            closed = true;
            break;
          }
        } else {
          field.push_back(line[j++]);
        }
      }
      if (!closed) throw DataError("unterminated quoted field");
      while (j < line.size() && line[j] != delim) {
        if (!std::isspace(static_cast<unsigned char>(line[j])))
          throw DataError("unexpected text after quoted field");
        ++j;
      }
      out.push_back(std::move(field));
      i = j;
    } else {
      std::size_t end = line.find(delim, i);
      if (end == std::string_view::npos) end = line.size();
      out.emplace_back(trim(line.substr(i, end - i)));
      i = end;
    }
    if (i >= line.size()) break;
    ++i;  // delimiter
    if (i == line.size()) {
      out.emplace_back();
      break;
    }
  }
  return out;
}

std::string quote(std::string_view field) {
  bool needs = field.find_first_of(",\"\n\r") != std::string_view::npos ||
               (!field.empty() && (std::isspace(static_cast<unsigned char>(field.front())) ||
                                   std::isspace(static_cast<unsigned char>(field.back()))));
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

Table Table::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open table '{}'", path.string()));
  return parse(in, path.string());
}

Table Table::parse(std::istream& in, std::string source_name) {
  Table t;
  t.source_ = std::move(source_name);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // UTF-8 byte order mark from spreadsheet exports.
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    std::vector<std::string> fields;
    try {
      fields = split_line(line);
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}:{}: {}", t.source_, lineno, e.what()));
    }
    if (!have_header) {
      t.header_ = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header_.size()) {
      throw DataError(fmt::format("{}:{}: expected {} fields, found {}", t.source_, lineno,
                                  t.header_.size(), fields.size()));
    }
    t.rows_.push_back(Row{lineno, std::move(fields)});
  }
  if (!have_header) throw DataError(fmt::format("{}: missing header row", t.source_));
  return t;
}

std::optional<std::size_t> Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i)
    if (iequals(header_[i], name)) return i;
  return std::nullopt;
}

std::size_t Table::require_column(std::string_view name) const {
  if (auto c = column(name)) return *c;
  throw DataError(fmt::format("{}: missing required column '{}'", source_, name));
}

double parse_double(std::string_view text, std::string_view what) {
  text = trim(text);
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw DataError(fmt::format("invalid number '{}' for {}", text, what));
  return v;
}

long long parse_int(std::string_view text, std::string_view what) {
  text = trim(text);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw DataError(fmt::format("invalid integer '{}' for {}", text, what));
  return v;
}

}  // namespace otopipe::csv
