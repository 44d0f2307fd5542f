#include "diffest/csv.hpp"

#include <sstream>

#include "diffest/common.hpp"

namespace diffest::csv {

std::string encode_field(std::string_view field) {
  bool needs_quotes = field.find_first_of(",\"\n\r") != std::string_view::npos;
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::string encode_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += encode_field(fields[i]);
  }
  out += '\n';
  return out;
}

std::vector<std::string> parse_row(std::string_view line, std::size_t line_no,
                                   const std::string& context) {
  std::vector<std::string> fields;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      if (!cur.empty()) {
        throw Error(context + ": line " + std::to_string(line_no) +
                    ": stray quote inside unquoted field");
      }
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (in_quotes) {
    throw Error(context + ": line " + std::to_string(line_no) + ": unterminated quote");
  }
  fields.push_back(cur);
  return fields;
}

Table read_file(const std::string& path) {
  Table table;
  const std::string content = diffest::read_file(path);
  const auto lines = split_lines(content);
  if (lines.empty()) throw Error(path + ": empty CSV file");
  table.header = parse_row(lines[0], 1, path);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    table.rows.push_back(parse_row(lines[i], i + 1, path));
  }
  return table;
}

void write_file(const std::string& path, const Table& table) {
  std::string out = encode_row(table.header);
  for (const auto& row : table.rows) out += encode_row(row);
  diffest::write_file(path, out);
}

}  // namespace diffest::csv
