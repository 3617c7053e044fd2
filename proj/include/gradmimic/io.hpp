#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gradmimic::io {

/// Round-trippable decimal form with 17 significant digits ("C" locale).
std::string format_double(double value);

/// Split one CSV record on commas. No quoting; none of the schemas here need it.
std::vector<std::string_view> split_csv(std::string_view line);

double parse_double(std::string_view field, const std::string& source, std::size_t line);
std::size_t parse_index(std::string_view field, const std::string& source, std::size_t line);

/// Read a whole text file; throws std::runtime_error if it cannot be opened.
std::string read_file(const std::filesystem::path& path);
/// Write text with LF line endings, creating parent directories.
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Lines without terminators; a trailing '\r' is stripped.
std::vector<std::string_view> lines(std::string_view text);

}  // namespace gradmimic::io
