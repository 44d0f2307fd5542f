#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace diffest::csv {

// RFC-4180 style quoting, '\n' line ends, no trailing newline surprises.
std::string encode_field(std::string_view field);
std::string encode_row(const std::vector<std::string>& fields);
std::vector<std::string> parse_row(std::string_view line, std::size_t line_no,
                                   const std::string& context);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Table read_file(const std::string& path);
void write_file(const std::string& path, const Table& table);

}  // namespace diffest::csv
