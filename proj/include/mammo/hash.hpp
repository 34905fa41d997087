#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mammo {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Lowercase hex SHA-256 of a file's content; throws Error{IoFailure}.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace mammo
