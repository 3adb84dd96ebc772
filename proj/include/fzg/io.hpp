#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace fzg {

// Writes `bytes` to a sibling temp file, flushes, then renames over `path`.
// Readers never observe a partially written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace fzg
