#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace uhd {

// Whole-file helpers. Writes go through a temp file in the target directory
// followed by a rename, so readers never observe partial content.
std::vector<uint8_t> read_file_bytes(const std::string& path);  // IoError if unreadable
void atomic_write_bytes(const std::string& path, std::span<const uint8_t> bytes);
void atomic_write_text(const std::string& path, const std::string& text);

}  // namespace uhd
