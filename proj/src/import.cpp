#include <algorithm>
#include <fstream>
#include <set>

#include "slurmbridge/archive.hpp"
#include "slurmbridge/orchestrator.hpp"

namespace slurmbridge {

namespace fs = std::filesystem;

namespace {

bool is_image_name(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  for (std::string_view ext : {".tif", ".tiff", ".png", ".jpg", ".jpeg"})
    if (name.size() > ext.size() && name.compare(name.size() - ext.size(), ext.size(), ext) == 0) return true;
  return false;
}

std::string stem_of(const std::string& filename) { return filename.substr(0, filename.find('.')); }

struct Placement {
  fs::path target;
  std::string data;            // for archive entries
  std::optional<fs::path> copy_from;  // for whole files
};

void write_all(const std::vector<Placement>& placements) {
  std::set<fs::path> seen;
  for (const auto& p : placements) {
    std::error_code ec;
    if (fs::exists(p.target, ec)) throw Error(Errc::CollisionError, p.target.string(), "file already exists");
    if (!seen.insert(p.target).second) throw Error(Errc::CollisionError, p.target.string(), "two results map to one path");
  }
  for (const auto& p : placements) {
    fs::create_directories(p.target.parent_path());
    if (p.copy_from) {
      fs::copy_file(*p.copy_from, p.target);
      continue;
    }
    std::ofstream out(p.target, std::ios::binary);
    out.write(p.data.data(), static_cast<std::streamsize>(p.data.size()));
    if (!out) throw Error(Errc::DestinationUnwritable, p.target.string(), "write failed");
  }
}

}  // namespace

std::string_view to_string(OutputMode m) noexcept {
  switch (m) {
    case OutputMode::ImagesFolder: return "images";
    case OutputMode::SidecarAttachments: return "sidecar";
    case OutputMode::SingleZip: return "zip";
  }
  return "?";
}

std::optional<OutputMode> parse_output_mode(std::string_view s) noexcept {
  for (auto m : {OutputMode::ImagesFolder, OutputMode::SidecarAttachments, OutputMode::SingleZip})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

std::vector<fs::path> import_results(const RunRecord& record, const fs::path& destination, OutputMode mode) {
  std::vector<fs::path> zips;
  if (record.overall_state == RunStage::Done || record.overall_state == RunStage::PartialFailure)
    for (const auto& b : record.batches)
      if (b.results_zip) zips.push_back(*b.results_zip);
  if (zips.empty()) throw Error(Errc::NoResults, record.run_id, "run has no result archives");

  std::vector<Placement> placements;
  const auto run_root = destination / record.run_id;
  if (mode == OutputMode::SingleZip) {
    for (const auto& z : zips) placements.push_back({destination / z.filename(), {}, z});
  } else {
    for (const auto& z : zips) {
      for (auto& e : read_zip_file(z)) {
        if (mode == OutputMode::ImagesFolder) {
          if (is_image_name(e.name)) placements.push_back({run_root / e.name, std::move(e.data), std::nullopt});
          continue;
        }
        const auto name = fs::path(e.name).filename().string();
        const auto stem = stem_of(name);
        const std::string* best = nullptr;
        for (const auto& [id, path] : record.inputs)
          if (stem.rfind(id, 0) == 0 && (!best || id.size() > best->size())) best = &id;
        const auto target = best ? record.inputs.at(*best).parent_path() / name : run_root / "unmatched" / name;
        placements.push_back({target, std::move(e.data), std::nullopt});
      }
    }
  }
  write_all(placements);
  std::vector<fs::path> written;
  for (const auto& p : placements) written.push_back(p.target);
  return written;
}

}  // namespace slurmbridge
