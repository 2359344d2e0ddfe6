#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace hiercls {

/// Shortest decimal string that parses back to the same double.
std::string format_double(double x);

/// Strict parse of a whole field; returns false on trailing garbage.
bool parse_double(std::string_view field, double& out);

/// Comma split with no quoting; identifiers never contain commas.
std::vector<std::string_view> split_csv(std::string_view line);

std::string join_csv(const std::vector<std::string>& fields);

/// Lines with '\r' stripped; a trailing newline does not produce an empty line.
std::vector<std::string_view> text_lines(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace hiercls
