#pragma once

#include <string>
#include <string_view>

namespace dpadaln::io {

/// Writes to a temporary sibling file, flushes it, then renames it over `path`.
void write_file_atomic(const std::string& path, std::string_view content);
std::string read_file(const std::string& path);

}  // namespace dpadaln::io
