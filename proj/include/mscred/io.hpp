#pragma once

#include <string>

namespace mscred::io {

/// Writes content to a temp file in the target directory then renames it,
/// so interrupted runs never leave a partially written artifact.
void atomic_write(const std::string& path, const std::string& content);

/// Binary variant.
void atomic_write_bytes(const std::string& path, const void* data, std::size_t size);

std::string read_file(const std::string& path);

void ensure_parent_dir(const std::string& path);

}  // namespace mscred::io
