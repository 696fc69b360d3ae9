#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace persona {

std::string sha256_hex(std::string_view bytes);

std::string base64_encode(std::string_view bytes);
// Throws DecodeError on malformed input.
std::string base64_decode(std::string_view text);

// Milliseconds since the Unix epoch, UTC.
std::int64_t now_ms();

std::string read_file(const std::filesystem::path& path);
// Writes through a sibling temp file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace persona
