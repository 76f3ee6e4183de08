#ifndef CBW_CSV_HPP
#define CBW_CSV_HPP

// Minimal RFC 4180 reader/writer: comma separator, '.' decimal, header row
// required, double-quote escaping.

#include "cbw/common.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cbw::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of `name` in the header, or -1.
  long column(std::string_view name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return static_cast<long>(j);
    }
    return -1;
  }
};

inline std::vector<std::vector<std::string>> parse_records(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        field += ch;
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (!field.empty()) throw DataError("csv: stray quote on line " + std::to_string(line));
        quoted = true;
        field_started = true;
        break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (field_started || !field.empty() || !record.empty()) {
          record.push_back(std::move(field));
          records.push_back(std::move(record));
        }
        field.clear();
        record.clear();
        field_started = false;
        ++line;
        break;
      default:
        field += ch;
        field_started = true;
    }
  }
  if (quoted) throw DataError("csv: unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

inline Table parse(std::string_view text) {
  std::string_view body = text;
  if (body.size() >= 3 && body.substr(0, 3) == "\xEF\xBB\xBF") body.remove_prefix(3);
  auto records = parse_records(body);
  if (records.empty()) throw DataError("csv: missing header row");
  Table t;
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size()) {
      throw DataError("csv: row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                      " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Table read(const std::filesystem::path& path) { return parse(read_file(path)); }

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t j = 0; j < fields.size(); ++j) {
    if (j) out << ',';
    out << escape(fields[j]);
  }
  out << '\n';
}

/// Shortest round-trippable decimal form.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Parses a full-field number; throws DataError naming `where` otherwise.
inline double parse_double(const std::string& s, const std::string& where) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (s.empty() || end == begin || *end != '\0') throw DataError("unparseable number '" + s + "' at " + where);
  return v;
}

}  // namespace cbw::csv

#endif  // CBW_CSV_HPP
