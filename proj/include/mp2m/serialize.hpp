#pragma once

// Helpers shared by the versioned text formats (dataset, bank, checkpoint,
// predictions). Floating point values are written as C99 hex floats so a
// save/load cycle is bit-exact.

#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mp2m {

std::string format_hex(double v);
// %.17g decimal; also round-trips exactly.
std::string format_g(double v);
// Accepts hex floats as well as ordinary decimal notation.
double parse_double(std::string_view token);
long long parse_int(std::string_view token);

std::vector<std::string_view> split_ws(std::string_view line);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

// Reads a versioned text file line by line. Errors become FormatError with the
// file kind and line number.
class RecordReader {
 public:
  RecordReader(std::istream& in, std::string kind);

  // Next non-empty, non-comment line split on whitespace; false at EOF.
  bool next(std::vector<std::string_view>& fields);
  // Like next() but EOF is an error.
  std::vector<std::string_view> expect_line();
  // Expects `key v1 v2 ...` and returns the values.
  std::vector<std::string_view> expect_key(std::string_view key,
                                           std::size_t n_values);
  void expect_header(std::string_view magic, std::string_view version);

  [[noreturn]] void fail(const std::string& what) const;
  std::size_t line_number() const { return line_no_; }

 private:
  std::istream& in_;
  std::string kind_;
  std::string line_;
  std::size_t line_no_ = 0;
};

std::vector<double> parse_doubles(std::span<const std::string_view> tokens);
void append_doubles(std::string& out, std::span<const double> values);

}  // namespace mp2m
