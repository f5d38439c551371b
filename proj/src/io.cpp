#include "lbm/io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

namespace lbm {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

/// Non-blank lines with their 1-based line numbers.
std::vector<std::pair<std::size_t, std::string>> lines_of(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::size_t number = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? text.npos : end - start);
    ++number;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!trim(line).empty()) out.emplace_back(number, std::string(line));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

std::optional<Cell> ternary_token(std::string_view token) {
  if (token == "0") return Cell::Zero;
  if (token == "1") return Cell::One;
  if (token.empty() || lower(token) == "na") return Cell::Missing;
  return std::nullopt;
}

std::optional<Cell> vote_token(std::string_view token) {
  const std::string t = lower(token);
  if (t == "for") return Cell::One;
  if (t == "against") return Cell::Zero;
  if (t == "abstained" || t == "absent") return Cell::Missing;
  return std::nullopt;
}

ObservedMatrix build(const std::vector<std::vector<Cell>>& rows) {
  std::vector<Cell> cells;
  for (const auto& r : rows) cells.insert(cells.end(), r.begin(), r.end());
  return ObservedMatrix(rows.size(), rows.front().size(), std::move(cells));
}

ObservedMatrix parse_ternary(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw ParseError("empty matrix file", 0, 0);
  std::size_t first = 0;
  {
    const auto fields = split_fields(lines[0].second);
    const bool header = std::none_of(fields.begin(), fields.end(), [](const std::string& f) {
      return ternary_token(f).has_value();
    });
    if (header) first = 1;
  }
  if (first >= lines.size()) throw ParseError("matrix file has a header but no data rows", lines[0].first, 0);
  std::vector<std::vector<Cell>> rows;
  std::size_t width = 0;
  for (std::size_t k = first; k < lines.size(); ++k) {
    const auto& [number, line] = lines[k];
    const auto fields = split_fields(line);
    if (rows.empty()) width = fields.size();
    if (fields.size() != width)
      throw ParseError("ragged row: expected " + std::to_string(width) + " fields, found " +
                           std::to_string(fields.size()),
                       number, 0);
    std::vector<Cell> row;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto cell = ternary_token(fields[c]);
      if (!cell) throw ParseError("unknown token '" + fields[c] + "'", number, c + 1);
      row.push_back(*cell);
    }
    rows.push_back(std::move(row));
  }
  return build(rows);
}

ObservedMatrix parse_votes(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.size() < 2) throw ParseError("votes file needs a header row and at least one data row", 0, 0);
  const std::size_t width = split_fields(lines[0].second).size();
  if (width < 2) throw ParseError("votes header needs an identifier column and at least one vote column", lines[0].first, 0);
  std::vector<std::vector<Cell>> rows;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& [number, line] = lines[k];
    const auto fields = split_fields(line);
    if (fields.size() != width)
      throw ParseError("ragged row: expected " + std::to_string(width) + " fields, found " +
                           std::to_string(fields.size()),
                       number, 0);
    std::vector<Cell> row;
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const auto cell = vote_token(fields[c]);
      if (!cell) throw ParseError("unknown vote '" + fields[c] + "'", number, c + 1);
      row.push_back(*cell);
    }
    rows.push_back(std::move(row));
  }
  return build(rows);
}

std::string located(const std::string& what, std::size_t line, std::size_t column) {
  std::string out = what;
  if (line > 0) out += " (line " + std::to_string(line);
  if (line > 0 && column > 0) out += ", column " + std::to_string(column);
  if (line > 0) out += ")";
  return out;
}

}  // namespace

ParseError::ParseError(const std::string& what, std::size_t line, std::size_t column)
    : std::runtime_error(located(what, line, column)), line_(line), column_(column) {}

MatrixFormat parse_format(std::string_view text) {
  const std::string t = lower(text);
  if (t == "ternary" || t == "ternary-csv") return MatrixFormat::Ternary;
  if (t == "votes" || t == "votes-csv") return MatrixFormat::Votes;
  throw std::invalid_argument("unknown matrix format: " + std::string(text));
}

ObservedMatrix parse_matrix(std::string_view text, MatrixFormat format) {
  return format == MatrixFormat::Ternary ? parse_ternary(text) : parse_votes(text);
}

ObservedMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_matrix(buffer.str(), format);
}

std::string format_matrix(const ObservedMatrix& x, MatrixFormat format) {
  std::string out;
  if (format == MatrixFormat::Votes) {
    out += "id";
    for (std::size_t j = 0; j < x.cols(); ++j) out += ",c" + std::to_string(j);
    out += '\n';
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (format == MatrixFormat::Votes) out += "r" + std::to_string(i) + ",";
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (j > 0) out += ',';
      const Cell c = x(i, j);
      if (format == MatrixFormat::Ternary)
        out += c == Cell::One ? "1" : c == Cell::Zero ? "0" : "NA";
      else
        out += c == Cell::One ? "for" : c == Cell::Zero ? "against" : "absent";
    }
    out += '\n';
  }
  return out;
}

void save_matrix(const std::filesystem::path& path, const ObservedMatrix& x, MatrixFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_matrix(x, format);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace lbm
