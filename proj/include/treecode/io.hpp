#pragma once

#include <string>

namespace treecode {

// Whole-file read; throws DataError when the file cannot be opened.
std::string read_file(const std::string& path);

// Writes `content` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace treecode
