#include "slurmbridge/archive.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "slurmbridge/error.hpp"

namespace slurmbridge {

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint16_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01
constexpr std::uint16_t kVersion = 20;
constexpr std::uint16_t kUtf8Flag = 1u << 11;

void put16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>(v >> 8));
}

void put32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get16(std::string_view b, std::size_t at) {
  if (at + 2 > b.size()) throw Error(Errc::CorruptArchive, "zip", "truncated");
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) | (static_cast<unsigned char>(b[at + 1]) << 8));
}

std::uint32_t get32(std::string_view b, std::size_t at) {
  return static_cast<std::uint32_t>(get16(b, at)) | (static_cast<std::uint32_t>(get16(b, at + 2)) << 16);
}

std::uint32_t crc_of(std::string_view data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - done, std::numeric_limits<uInt>::max()));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data() + done), chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string inflate_raw(std::string_view compressed, std::size_t expected) {
  std::string out(expected, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw Error(Errc::CorruptArchive, "zip", "inflate init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  zs.avail_in = static_cast<uInt>(compressed.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected) throw Error(Errc::CorruptArchive, "zip", "bad deflate stream");
  return out;
}

}  // namespace

bool is_safe_entry_name(std::string_view name) {
  if (name.empty() || name.front() == '/' || name.find('\\') != std::string_view::npos) return false;
  std::size_t pos = 0;
  while (pos <= name.size()) {
    auto slash = name.find('/', pos);
    if (slash == std::string_view::npos) slash = name.size();
    if (name.substr(pos, slash - pos) == "..") return false;
    pos = slash + 1;
  }
  return true;
}

void ZipWriter::add(std::string_view name, std::string_view data) {
  if (finished_) throw std::logic_error("ZipWriter: add after finish");
  if (data.size() > std::numeric_limits<std::uint32_t>::max() || offset_ > std::numeric_limits<std::uint32_t>::max())
    throw std::length_error("ZipWriter: archive exceeds 4 GiB");
  CentralRecord rec{std::string(name), crc_of(data), static_cast<std::uint32_t>(data.size()),
                    static_cast<std::uint32_t>(offset_)};
  std::string header;
  put32(header, kLocalSig);
  put16(header, kVersion);
  put16(header, kUtf8Flag);
  put16(header, 0);  // stored
  put16(header, 0);  // time
  put16(header, kDosDate);
  put32(header, rec.crc);
  put32(header, rec.size);
  put32(header, rec.size);
  put16(header, static_cast<std::uint16_t>(rec.name.size()));
  put16(header, 0);
  header += rec.name;
  out_.write(header.data(), static_cast<std::streamsize>(header.size()));
  out_.write(data.data(), static_cast<std::streamsize>(data.size()));
  offset_ += header.size() + data.size();
  records_.push_back(std::move(rec));
}

void ZipWriter::finish() {
  if (finished_) return;
  finished_ = true;
  std::string dir;
  for (const auto& rec : records_) {
    put32(dir, kCentralSig);
    put16(dir, kVersion);
    put16(dir, kVersion);
    put16(dir, kUtf8Flag);
    put16(dir, 0);
    put16(dir, 0);
    put16(dir, kDosDate);
    put32(dir, rec.crc);
    put32(dir, rec.size);
    put32(dir, rec.size);
    put16(dir, static_cast<std::uint16_t>(rec.name.size()));
    put16(dir, 0);  // extra
    put16(dir, 0);  // comment
    put16(dir, 0);  // disk
    put16(dir, 0);  // internal attrs
    put32(dir, 0);  // external attrs
    put32(dir, rec.offset);
    dir += rec.name;
  }
  std::string end;
  put32(end, kEndSig);
  put16(end, 0);
  put16(end, 0);
  put16(end, static_cast<std::uint16_t>(records_.size()));
  put16(end, static_cast<std::uint16_t>(records_.size()));
  put32(end, static_cast<std::uint32_t>(dir.size()));
  put32(end, static_cast<std::uint32_t>(offset_));
  put16(end, 0);
  out_.write(dir.data(), static_cast<std::streamsize>(dir.size()));
  out_.write(end.data(), static_cast<std::streamsize>(end.size()));
  out_.flush();
}

std::string zip_bytes(const std::vector<ArchiveEntry>& entries) {
  std::ostringstream out(std::ios::binary);
  ZipWriter writer(out);
  for (const auto& e : entries) writer.add(e.name, e.data);
  writer.finish();
  return std::move(out).str();
}

void write_zip_file(const std::filesystem::path& path, const std::vector<ArchiveEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::DestinationUnwritable, path.string(), "cannot create archive");
  ZipWriter writer(out);
  for (const auto& e : entries) writer.add(e.name, e.data);
  writer.finish();
  if (!out) throw Error(Errc::DestinationUnwritable, path.string(), "write failed");
}

std::vector<ArchiveEntry> read_zip(std::string_view bytes) {
  // End-of-central-directory record sits in the last 22 + comment bytes.
  if (bytes.size() < 22) throw Error(Errc::CorruptArchive, "zip", "too short");
  std::size_t eocd = std::string_view::npos;
  const std::size_t lowest = bytes.size() > 22 + 0xFFFF ? bytes.size() - 22 - 0xFFFF : 0;
  for (std::size_t i = bytes.size() - 22 + 1; i-- > lowest;) {
    if (get32(bytes, i) == kEndSig) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string_view::npos) throw Error(Errc::CorruptArchive, "zip", "no end of central directory");
  const auto count = get16(bytes, eocd + 10);
  std::size_t at = get32(bytes, eocd + 16);

  std::vector<ArchiveEntry> entries;
  for (std::uint16_t i = 0; i < count; ++i) {
    if (get32(bytes, at) != kCentralSig) throw Error(Errc::CorruptArchive, "zip", "bad central directory");
    const auto flags = get16(bytes, at + 8);
    const auto method = get16(bytes, at + 10);
    const auto crc = get32(bytes, at + 16);
    const auto csize = get32(bytes, at + 20);
    const auto usize = get32(bytes, at + 24);
    const auto name_len = get16(bytes, at + 28);
    const auto extra_len = get16(bytes, at + 30);
    const auto comment_len = get16(bytes, at + 32);
    const auto local = get32(bytes, at + 42);
    if (at + 46 + name_len > bytes.size()) throw Error(Errc::CorruptArchive, "zip", "truncated name");
    std::string name(bytes.substr(at + 46, name_len));
    at += 46 + name_len + extra_len + comment_len;

    if (flags & 0x1) throw Error(Errc::CorruptArchive, name, "encrypted entries are not supported");
    if (get32(bytes, local) != kLocalSig) throw Error(Errc::CorruptArchive, name, "bad local header");
    const std::size_t data_at = local + 30 + get16(bytes, local + 26) + get16(bytes, local + 28);
    if (data_at + csize > bytes.size()) throw Error(Errc::CorruptArchive, name, "truncated data");
    if (!name.empty() && name.back() == '/') continue;
    if (!is_safe_entry_name(name)) throw Error(Errc::CorruptArchive, name, "unsafe entry name");

    const auto raw = bytes.substr(data_at, csize);
    std::string data;
    if (method == 0) data = std::string(raw);
    else if (method == 8) data = inflate_raw(raw, usize);
    else throw Error(Errc::CorruptArchive, name, "unsupported compression method " + std::to_string(method));
    if (crc_of(data) != crc) throw Error(Errc::CorruptArchive, name, "CRC mismatch");
    entries.push_back({std::move(name), std::move(data)});
  }
  return entries;
}

std::vector<ArchiveEntry> read_zip_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::SourceMissing, path.string(), "cannot read archive");
  std::ostringstream buf;
  buf << in.rdbuf();
  return read_zip(buf.str());
}

}  // namespace slurmbridge
