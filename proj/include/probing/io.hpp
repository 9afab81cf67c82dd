#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace probing {

/// Writes to <path>.tmp and renames into place; creates parent directories.
void write_atomic(const std::filesystem::path& path, std::string_view data);

/// Whole file as bytes; NotFoundError when absent.
std::string read_bytes(const std::filesystem::path& path);

}  // namespace probing
