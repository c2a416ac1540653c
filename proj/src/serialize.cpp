#include "mp2m/serialize.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "mp2m/errors.hpp"

namespace mp2m {

std::string format_hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(std::string_view token) {
  std::string s(token);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw FormatError("not a number: '" + s + "'");
  }
  return v;
}

long long parse_int(std::string_view token) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw FormatError("not an integer: '" + std::string(token) + "'");
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' ||
                               line[i] == '\r' || line[i] == ',')) {
      ++i;
    }
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' &&
           line[j] != '\r' && line[j] != ',') {
      ++j;
    }
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RecordReader::RecordReader(std::istream& in, std::string kind)
    : in_(in), kind_(std::move(kind)) {}

bool RecordReader::next(std::vector<std::string_view>& fields) {
  while (std::getline(in_, line_)) {
    ++line_no_;
    fields = split_ws(line_);
    if (fields.empty() || fields[0].starts_with('#')) continue;
    return true;
  }
  return false;
}

std::vector<std::string_view> RecordReader::expect_line() {
  std::vector<std::string_view> fields;
  if (!next(fields)) fail("unexpected end of file");
  return fields;
}

std::vector<std::string_view> RecordReader::expect_key(std::string_view key,
                                                       std::size_t n_values) {
  auto fields = expect_line();
  if (fields[0] != key) {
    fail("expected '" + std::string(key) + "', found '" +
         std::string(fields[0]) + "'");
  }
  if (fields.size() != n_values + 1) {
    fail("'" + std::string(key) + "' expects " + std::to_string(n_values) +
         " values, found " + std::to_string(fields.size() - 1));
  }
  fields.erase(fields.begin());
  return fields;
}

void RecordReader::expect_header(std::string_view magic,
                                 std::string_view version) {
  std::vector<std::string_view> fields;
  if (!next(fields)) fail("empty file");
  if (fields.size() != 2 || fields[0] != magic) {
    fail("bad magic, expected '" + std::string(magic) + "'");
  }
  if (fields[1] != version) {
    fail("unsupported version '" + std::string(fields[1]) + "', expected '" +
         std::string(version) + "'");
  }
}

void RecordReader::fail(const std::string& what) const {
  throw FormatError(kind_ + " line " + std::to_string(line_no_) + ": " + what);
}

std::vector<double> parse_doubles(std::span<const std::string_view> tokens) {
  std::vector<double> out;
  out.reserve(tokens.size());
  for (auto t : tokens) out.push_back(parse_double(t));
  return out;
}

void append_doubles(std::string& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += format_hex(values[i]);
  }
}

}  // namespace mp2m
