#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace slurmbridge {

/// Lower-case hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// Lower-case hex SHA-256 of a file's content, streamed. Throws std::runtime_error if unreadable.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace slurmbridge
