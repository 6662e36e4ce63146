#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace slurmbridge {

struct ArchiveEntry {
  std::string name;  // relative, '/'-separated
  std::string data;

  bool operator==(const ArchiveEntry&) const = default;
};

/// Minimal ZIP writer: stored (uncompressed) entries, fixed timestamps, so
/// equal inputs give byte-identical archives. No ZIP64; entries must stay below 4 GiB.
class ZipWriter {
 public:
  explicit ZipWriter(std::ostream& out) : out_(out) {}
  ZipWriter(const ZipWriter&) = delete;
  ZipWriter& operator=(const ZipWriter&) = delete;

  void add(std::string_view name, std::string_view data);
  /// Writes the central directory. No entries may be added afterwards.
  void finish();

 private:
  struct CentralRecord {
    std::string name;
    std::uint32_t crc = 0;
    std::uint32_t size = 0;
    std::uint32_t offset = 0;
  };

  std::ostream& out_;
  std::vector<CentralRecord> records_;
  std::uint64_t offset_ = 0;
  bool finished_ = false;
};

std::string zip_bytes(const std::vector<ArchiveEntry>& entries);
void write_zip_file(const std::filesystem::path& path, const std::vector<ArchiveEntry>& entries);

/// Reads stored and deflated entries; directory entries (names ending in '/')
/// are dropped. Rejects absolute names and `..` segments.
/// Throws Error{CorruptArchive}.
std::vector<ArchiveEntry> read_zip(std::string_view bytes);
std::vector<ArchiveEntry> read_zip_file(const std::filesystem::path& path);

/// True for names that stay inside the extraction root.
bool is_safe_entry_name(std::string_view name);

}  // namespace slurmbridge
