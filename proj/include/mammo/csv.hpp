#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mammo::csv {

using Row = std::vector<std::string>;

/// RFC-4180 style reader: quoted fields, doubled quotes, CRLF tolerated.
/// Blank lines are skipped. Throws Error{IoFailure} if the file cannot be read.
std::vector<Row> read_file(const std::filesystem::path& path);
std::vector<Row> parse(std::string_view text);

/// Quotes a field only when it contains a separator, quote or newline.
std::string escape(std::string_view field);
std::string join(const Row& row);

}  // namespace mammo::csv
