#pragma once

// Minimal comma-separated reader: no quoting, optional surrounding spaces.

#include <string>
#include <string_view>
#include <vector>

namespace distimpute::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_line(std::string_view line);
Table parse(const std::string& text);
std::string read_file(const std::string& path);

}  // namespace distimpute::csv
