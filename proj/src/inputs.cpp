#include <algorithm>
#include <fstream>
#include <set>

#include "slurmbridge/archive.hpp"
#include "slurmbridge/orchestrator.hpp"

namespace slurmbridge {

namespace fs = std::filesystem;

namespace {

bool ends_with_ci(std::string_view s, std::string_view suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.begin(), suffix.end(), s.end() - static_cast<std::ptrdiff_t>(suffix.size()),
                    [](char a, char b) { return std::tolower(static_cast<unsigned char>(a)) == b; });
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::MissingInput, p.string(), "cannot read");
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

std::string_view to_string(InputFormat f) noexcept {
  switch (f) {
    case InputFormat::Zarr: return "Zarr";
    case InputFormat::Tiff2D: return "Tiff2D";
    case InputFormat::OmeTiff: return "OmeTiff";
  }
  return "?";
}

std::string_view packed_extension(InputFormat f) noexcept {
  switch (f) {
    case InputFormat::Zarr: return "zarr";
    case InputFormat::Tiff2D: return "tiff";
    case InputFormat::OmeTiff: return "ome.tiff";
  }
  return "";
}

InputItem make_input_item(const fs::path& path) {
  std::error_code ec;
  const auto status = fs::status(path, ec);
  if (ec || !fs::exists(status)) throw Error(Errc::MissingInput, path.string(), "no such file or directory");
  const auto name = path.filename().string();
  InputItem item{{}, path, InputFormat::Tiff2D};
  std::size_t ext = 0;
  if (fs::is_directory(status)) {
    if (!ends_with_ci(name, ".zarr")) throw Error(Errc::InvalidValue, path.string(), "directory is not a .zarr store");
    item.format = InputFormat::Zarr;
    ext = 5;
  } else if (ends_with_ci(name, ".ome.tiff") || ends_with_ci(name, ".ome.tif")) {
    item.format = InputFormat::OmeTiff;
    ext = ends_with_ci(name, ".ome.tiff") ? 9 : 8;
  } else if (ends_with_ci(name, ".tiff") || ends_with_ci(name, ".tif")) {
    item.format = InputFormat::Tiff2D;
    ext = ends_with_ci(name, ".tiff") ? 5 : 4;
  } else {
    throw Error(Errc::InvalidValue, path.string(), "unrecognised input format");
  }
  item.id = name.substr(0, name.size() - ext);
  if (item.id.empty()) throw Error(Errc::InvalidValue, path.string(), "empty item id");
  return item;
}

std::vector<InputItem> discover_inputs(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(Errc::MissingInput, dir.string(), "input directory missing");
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  std::vector<InputItem> items;
  for (const auto& p : entries) {
    if (p.filename().string().front() == '.') continue;
    try {
      items.push_back(make_input_item(p));
    } catch (const Error& e) {
      if (e.code() != Errc::InvalidValue) throw;
    }
  }
  return items;
}

fs::path pack_inputs(const std::vector<InputItem>& items, const fs::path& staging_dir) {
  if (items.empty()) throw Error(Errc::MissingInput, "items", "nothing to pack");
  std::set<std::string> ids;
  for (const auto& item : items) {
    if (!ids.insert(item.id).second) throw Error(Errc::DuplicateId, item.id, "item id used twice");
    std::error_code ec;
    if (!fs::exists(item.local_path, ec)) throw Error(Errc::MissingInput, item.local_path.string(), "no such input");
  }
  auto sorted = items;
  std::sort(sorted.begin(), sorted.end(), [](const InputItem& a, const InputItem& b) { return a.id < b.id; });

  std::vector<ArchiveEntry> entries;
  for (const auto& item : sorted) {
    const auto base = "in/" + item.id + "." + std::string(packed_extension(item.format));
    if (item.format != InputFormat::Zarr) {
      entries.push_back({base, read_bytes(item.local_path)});
      continue;
    }
    std::vector<std::pair<std::string, fs::path>> files;
    for (const auto& e : fs::recursive_directory_iterator(item.local_path))
      if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), item.local_path).generic_string(), e.path());
    std::sort(files.begin(), files.end());
    for (const auto& [rel, p] : files) entries.push_back({base + "/" + rel, read_bytes(p)});
  }
  fs::create_directories(staging_dir);
  const auto out = staging_dir / "inputs.zip";
  write_zip_file(out, entries);
  return out;
}

BatchPlan plan_batches(const std::vector<InputItem>& items, long long batch_size) {
  if (batch_size <= 0) throw Error(Errc::InvalidBatchSize, std::to_string(batch_size), "batch size must be positive");
  BatchPlan plan;
  plan.batch_size = static_cast<std::size_t>(batch_size);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i % plan.batch_size == 0) plan.batches.emplace_back();
    plan.batches.back().push_back(items[i].id);
  }
  return plan;
}

}  // namespace slurmbridge
