#pragma once

#include <filesystem>
#include <string>

namespace sersal {

// Writes to "<path>.tmp" then renames over `path`. Throws StateError on
// failure.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
// Whole file as bytes. Throws StateError when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

}  // namespace sersal
