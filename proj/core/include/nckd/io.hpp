#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace nckd {

/// Whole-file read; throws IoError when the file cannot be opened.
std::string read_text(const std::string& path);
/// Writes (truncating) the file; throws IoError on failure.
void write_text(const std::string& path, std::string_view contents);

/// 64-bit FNV-1a digest rendered as 16 hex digits. Not cryptographic; used to
/// fingerprint run outputs and configs.
std::string content_hash(std::string_view bytes);

}  // namespace nckd
