#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "lbm/model.hpp"

namespace lbm {

enum class MatrixFormat { Ternary, Votes };

MatrixFormat parse_format(std::string_view text);

class ParseError : public std::runtime_error {
 public:
  /// `line` and `column` are 1-based; 0 means not applicable.
  ParseError(const std::string& what, std::size_t line, std::size_t column);
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Ternary CSV: tokens 0, 1, NA (any case) or empty; an optional header row is
/// recognized when none of its tokens is a ternary token.
/// Votes CSV: header row of column identifiers, a leading row-identifier
/// column, tokens for / against / abstained / absent (any case).
ObservedMatrix parse_matrix(std::string_view text, MatrixFormat format);
ObservedMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format);

std::string format_matrix(const ObservedMatrix& x, MatrixFormat format);
void save_matrix(const std::filesystem::path& path, const ObservedMatrix& x, MatrixFormat format);

}  // namespace lbm
