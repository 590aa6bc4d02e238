#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace shiftlab {

/// Shortest-exact decimal (17 significant digits) for serialised floats.
std::string format_double(double value);

std::string sha256_hex(std::string_view bytes);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view contents);

/// Splits a CSV record on commas. Quoting is not supported.
std::vector<std::string> split_csv_line(std::string_view line);

std::string join(std::span<const std::string> parts, std::string_view sep);

}  // namespace shiftlab
