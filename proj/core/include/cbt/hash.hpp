#pragma once

#include <string>
#include <string_view>

namespace cbt {

/// Lowercase hex SHA-256 digest of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Digest of a file's contents; DataError if the file cannot be read.
std::string sha256_hex_of_file(const std::string& path);

}  // namespace cbt
