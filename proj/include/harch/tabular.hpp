#pragma once

// Delimiter-separated text files (CSV/TSV) with RFC 4180 quoting, plus a few
// file helpers shared by the loaders.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "harch/error.hpp"

namespace harch {

using Row = std::vector<std::string>;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

// ".tsv"/".tab" are tab separated, everything else comma separated.
inline char delimiter_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  return (ext == ".tsv" || ext == ".tab") ? '\t' : ',';
}

// Parses a whole document. Quoted fields may contain delimiters, doubled
// quotes and newlines. A trailing newline does not produce an empty row, and
// a UTF-8 byte order mark at the start is dropped.
inline std::vector<Row> parse_delimited(std::string_view text, char delim) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == delim) {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') continue;
      end_row();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) fail(ErrorKind::kMalformedInput, "unterminated quoted field");
  if (field_started || !row.empty()) end_row();
  return rows;
}

inline std::string quote_field(std::string_view field, char delim) {
  bool needs = field.find_first_of(std::string{delim, '"', '\n', '\r'}) != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

inline std::string format_row(const Row& row, char delim) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out.push_back(delim);
    out += quote_field(row[i], delim);
  }
  out.push_back('\n');
  return out;
}

inline std::string format_delimited(const std::vector<Row>& rows, char delim) {
  std::string out;
  for (const auto& row : rows) out += format_row(row, delim);
  return out;
}

// Splits "a,b, c" on commas and trims blanks; used for list-valued flags.
inline std::vector<std::string> split_list(std::string_view text, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) pos = text.size();
    auto item = text.substr(start, pos - start);
    while (!item.empty() && (item.front() == ' ' || item.front() == '\t')) item.remove_prefix(1);
    while (!item.empty() && (item.back() == ' ' || item.back() == '\t')) item.remove_suffix(1);
    if (!item.empty()) out.emplace_back(item);
    start = pos + 1;
  }
  return out;
}

}  // namespace harch
