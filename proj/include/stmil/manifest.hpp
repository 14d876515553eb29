#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stmil/errors.hpp"

namespace stmil {

enum class VideoLabel { kNormal, kAnomalous };
enum class Split { kTrain, kTest };

inline const char* to_string(VideoLabel label) {
  return label == VideoLabel::kNormal ? "NORMAL" : "ANOMALOUS";
}

struct ManifestEntry {
  std::string cuboid_path;
  std::string video_id;
  std::uint32_t segment_index = 0;
  VideoLabel label = VideoLabel::kNormal;
};

/// Dataset listing. Labels are per-video: every segment of one video_id
/// carries the same label, and (video_id, segment_index) pairs are unique.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  Split split = Split::kTrain;
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> fields;
  std::string f;
  while (ss >> f) fields.push_back(std::move(f));
  return fields;
}

inline bool parse_u32(const std::string& s, std::uint32_t& out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto [p, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && p == end;
}

}  // namespace detail

/// Checks per-video label consistency and (video_id, segment_index)
/// uniqueness; throws FormatError naming the offender.
inline void validate_manifest(const DatasetManifest& manifest) {
  std::map<std::string, VideoLabel> labels;
  std::set<std::pair<std::string, std::uint32_t>> seen;
  for (const auto& e : manifest.entries) {
    auto [it, inserted] = labels.emplace(e.video_id, e.label);
    if (!inserted && it->second != e.label)
      throw FormatError("manifest: conflicting labels for video '" + e.video_id +
                        "'");
    if (!seen.emplace(e.video_id, e.segment_index).second)
      throw FormatError("manifest: duplicate segment " + e.video_id + "/" +
                        std::to_string(e.segment_index));
  }
}

/// Parses a line-oriented manifest: one
/// `<cuboid_path> <video_id> <segment_index> <NORMAL|ANOMALOUS>` entry per
/// line, whitespace-separated; lines whose first non-blank character is `#`
/// are comments. Every malformed line is reported with its number.
inline DatasetManifest load_manifest(const std::filesystem::path& path,
                                     Split split = Split::kTrain) {
  std::ifstream is(path);
  if (!is) throw IoError("load_manifest: cannot open " + path.string());
  DatasetManifest manifest;
  manifest.split = split;
  std::map<std::string, std::pair<VideoLabel, int>> labels;  // label + first line
  std::map<std::pair<std::string, std::uint32_t>, int> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto fields = detail::split_fields(line);
    if (fields.empty() || fields[0][0] == '#') continue;
    if (fields.size() != 4)
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 4 fields, got " +
                        std::to_string(fields.size()));
    ManifestEntry entry;
    entry.cuboid_path = fields[0];
    entry.video_id = fields[1];
    if (!detail::parse_u32(fields[2], entry.segment_index))
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": bad segment index '" + fields[2] + "'");
    if (fields[3] == "NORMAL") {
      entry.label = VideoLabel::kNormal;
    } else if (fields[3] == "ANOMALOUS") {
      entry.label = VideoLabel::kAnomalous;
    } else {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": bad label '" + fields[3] + "'");
    }
    auto [lit, linserted] = labels.emplace(entry.video_id,
                                           std::make_pair(entry.label, lineno));
    if (!linserted && lit->second.first != entry.label)
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": label conflicts with line " +
                        std::to_string(lit->second.second) + " for video '" +
                        entry.video_id + "'");
    auto key = std::make_pair(entry.video_id, entry.segment_index);
    auto [sit, sinserted] = seen.emplace(key, lineno);
    if (!sinserted)
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": duplicate segment, first seen at line " +
                        std::to_string(sit->second));
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

inline void save_manifest(const DatasetManifest& manifest,
                          const std::filesystem::path& path) {
  validate_manifest(manifest);
  for (const auto& e : manifest.entries) {
    if (e.cuboid_path.find_first_of(" \t") != std::string::npos ||
        e.video_id.find_first_of(" \t") != std::string::npos ||
        e.cuboid_path.empty() || e.video_id.empty())
      throw FormatError("save_manifest: path/id fields must be non-empty and "
                        "free of whitespace");
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("save_manifest: cannot open " + path.string());
  for (const auto& e : manifest.entries)
    os << e.cuboid_path << ' ' << e.video_id << ' ' << e.segment_index << ' '
       << to_string(e.label) << '\n';
  if (!os) throw IoError("save_manifest: short write to " + path.string());
}

/// Resolves a manifest-relative cuboid path against a base directory.
inline std::filesystem::path resolve_cuboid_path(const std::filesystem::path& base,
                                                 const std::string& cuboid_path) {
  std::filesystem::path p(cuboid_path);
  return p.is_absolute() ? p : base / p;
}

}  // namespace stmil
