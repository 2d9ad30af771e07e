#pragma once

#include <string>

namespace mibt {

std::string read_text_file(const std::string& path);

/// Writes `<path>.tmp` and renames it over `path`, so readers see either the
/// old file or the complete new one. The temporary is removed on failure.
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace mibt
