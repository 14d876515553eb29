#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "stmil/errors.hpp"
#include "stmil/fcub.hpp"
#include "stmil/manifest.hpp"
#include "stmil/rng.hpp"
#include "stmil/tensor.hpp"

namespace stmil {

/// Parameters of the planted-anomaly dataset generator.
struct SyntheticSpec {
  std::uint32_t n_normal_videos = 20;
  std::uint32_t n_anomalous_videos = 20;
  std::uint32_t segments_per_video = 4;
  std::array<std::uint32_t, 4> dims{528, 4, 14, 14};  // C, T, H, W
  std::uint32_t cell_size = 2;
  double shift = 4.0;  // mean offset of planted cells
  std::uint32_t anomaly_cell_count = 1;
  std::uint64_t seed = 0;

  std::uint32_t grid_h() const { return dims[2] / cell_size; }
  std::uint32_t grid_w() const { return dims[3] / cell_size; }

  void validate() const {
    if (n_normal_videos == 0 || n_anomalous_videos == 0)
      throw FormatError("synthetic: need at least one video of each class");
    if (segments_per_video == 0)
      throw FormatError("synthetic: segments per video must be positive");
    checked_volume(dims);
    if (cell_size == 0) throw FormatError("synthetic: cell size must be positive");
    if (dims[2] % cell_size != 0 || dims[3] % cell_size != 0)
      throw FormatError("synthetic: cell size must divide spatial dims");
    if (!(shift >= 0.0) || !std::isfinite(shift))
      throw FormatError("synthetic: shift must be finite and >= 0");
    if (anomaly_cell_count == 0)
      throw FormatError("synthetic: anomaly cell count must be positive");
    if (anomaly_cell_count > std::uint64_t(grid_h()) * grid_w())
      throw FormatError("synthetic: anomaly cell count exceeds grid");
  }
};

/// Ground truth of one generated anomalous video: the contiguous anomalous
/// segment run (inclusive) and the planted cell indices (row-major, sorted).
struct PlantedVideo {
  std::string video_id;
  std::uint32_t first_anomalous_segment = 0;
  std::uint32_t last_anomalous_segment = 0;
  std::vector<std::uint32_t> cells;

  friend bool operator==(const PlantedVideo&, const PlantedVideo&) = default;
};

struct PlantedTruth {
  std::vector<PlantedVideo> videos;

  friend bool operator==(const PlantedTruth&, const PlantedTruth&) = default;
};

namespace detail {

inline std::string synth_video_id(const char* prefix, std::uint32_t index) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s_%03u", prefix, index);
  return buf;
}

// Fills one segment tensor element by element in storage order, one normal
// draw per element, so output depends only on the stream position.
inline Tensor4<float> synth_segment(const SyntheticSpec& spec, Rng& rng,
                                    const std::vector<char>& planted_mask,
                                    bool anomalous) {
  Tensor4<float> t(spec.dims[0], spec.dims[1], spec.dims[2], spec.dims[3]);
  const std::uint32_t grid_w = spec.grid_w();
  std::size_t i = 0;
  for (std::uint32_t c = 0; c < spec.dims[0]; ++c)
    for (std::uint32_t tt = 0; tt < spec.dims[1]; ++tt)
      for (std::uint32_t h = 0; h < spec.dims[2]; ++h)
        for (std::uint32_t w = 0; w < spec.dims[3]; ++w) {
          const std::uint32_t cell =
              (h / spec.cell_size) * grid_w + (w / spec.cell_size);
          const double mean =
              anomalous && planted_mask[cell] ? spec.shift : 0.0;
          t.data[i++] = static_cast<float>(mean + rng.normal());
        }
  return t;
}

}  // namespace detail

/// Generates the planted-anomaly dataset under `out_dir/features` and
/// returns its manifest (paths relative to out_dir) plus the planted truth.
///
/// Pure function of the spec: one generator stream seeded from spec.seed
/// drives, in order, every normal video's segments, then per anomalous
/// video its run length, run start, planted cells, and segments. Normal
/// cells are i.i.d. standard normal; planted cells of anomalous segments
/// have mean `shift`. The anomalous run covers at least half the segments.
inline std::pair<DatasetManifest, PlantedTruth> generate_synthetic(
    const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "features", ec);
  if (ec)
    throw IoError("generate_synthetic: cannot create " +
                  (out_dir / "features").string() + ": " + ec.message());

  Rng rng(spec.seed);
  DatasetManifest manifest;
  PlantedTruth truth;
  const std::uint32_t grid =
      spec.grid_h() * spec.grid_w();

  auto emit_video = [&](const std::string& id, VideoLabel label,
                        const std::vector<char>& mask,
                        std::uint32_t run_first, std::uint32_t run_last) {
    for (std::uint32_t s = 0; s < spec.segments_per_video; ++s) {
      const bool anomalous = label == VideoLabel::kAnomalous &&
                             s >= run_first && s <= run_last;
      const Tensor4<float> t = detail::synth_segment(spec, rng, mask, anomalous);
      const std::string rel = "features/" + id + "_" + std::to_string(s) + ".fcub";
      write_cuboid(t, out_dir / rel);
      manifest.entries.push_back(ManifestEntry{rel, id, s, label});
    }
  };

  const std::vector<char> no_mask(grid, 0);
  for (std::uint32_t v = 0; v < spec.n_normal_videos; ++v)
    emit_video(detail::synth_video_id("normal", v), VideoLabel::kNormal, no_mask,
               0, 0);

  for (std::uint32_t v = 0; v < spec.n_anomalous_videos; ++v) {
    const std::uint32_t s_total = spec.segments_per_video;
    const std::uint32_t min_run = (s_total + 1) / 2;
    const auto run_len = static_cast<std::uint32_t>(
        min_run + rng.below(s_total - min_run + 1));
    const auto run_first =
        static_cast<std::uint32_t>(rng.below(s_total - run_len + 1));

    // Partial Fisher-Yates draw of distinct planted cells.
    std::vector<std::uint32_t> pool(grid);
    std::iota(pool.begin(), pool.end(), 0u);
    for (std::uint32_t k = 0; k < spec.anomaly_cell_count; ++k) {
      const auto j = k + rng.below(grid - k);
      std::swap(pool[k], pool[j]);
    }
    std::vector<std::uint32_t> cells(pool.begin(),
                                     pool.begin() + spec.anomaly_cell_count);
    std::sort(cells.begin(), cells.end());
    std::vector<char> mask(grid, 0);
    for (auto c : cells) mask[c] = 1;

    PlantedVideo pv;
    pv.video_id = detail::synth_video_id("anom", v);
    pv.first_anomalous_segment = run_first;
    pv.last_anomalous_segment = run_first + run_len - 1;
    pv.cells = std::move(cells);
    emit_video(pv.video_id, VideoLabel::kAnomalous, mask,
               pv.first_anomalous_segment, pv.last_anomalous_segment);
    truth.videos.push_back(std::move(pv));
  }
  validate_manifest(manifest);
  return {std::move(manifest), std::move(truth)};
}

/// Planted-truth text format, one video per line:
/// `<video_id> <first_segment> <last_segment> <cell>[,<cell>...]`.
inline void save_planted_truth(const PlantedTruth& truth,
                               const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("save_planted_truth: cannot open " + path.string());
  for (const auto& v : truth.videos) {
    if (v.video_id.empty() ||
        v.video_id.find_first_of(" \t\r\n") != std::string::npos)
      throw FormatError("save_planted_truth: video id '" + v.video_id +
                        "' not representable");
    if (v.last_anomalous_segment < v.first_anomalous_segment)
      throw FormatError("save_planted_truth: empty segment run for " + v.video_id);
    if (v.cells.empty())
      throw FormatError("save_planted_truth: no cells for " + v.video_id);
    os << v.video_id << ' ' << v.first_anomalous_segment << ' '
       << v.last_anomalous_segment << ' ';
    for (std::size_t i = 0; i < v.cells.size(); ++i) {
      if (i) os << ',';
      os << v.cells[i];
    }
    os << '\n';
  }
  if (!os) throw IoError("save_planted_truth: short write to " + path.string());
}

inline PlantedTruth load_planted_truth(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_planted_truth: cannot open " + path.string());
  PlantedTruth truth;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty() || fields[0][0] == '#') continue;
    auto fail = [&](const std::string& what) -> FormatError {
      return FormatError(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    if (fields.size() != 4)
      throw fail("expected 4 fields, got " + std::to_string(fields.size()));
    PlantedVideo v;
    v.video_id = fields[0];
    if (!seen.insert(v.video_id).second)
      throw fail("duplicate video id '" + v.video_id + "'");
    if (!detail::parse_u32(fields[1], v.first_anomalous_segment))
      throw fail("bad first segment '" + fields[1] + "'");
    if (!detail::parse_u32(fields[2], v.last_anomalous_segment))
      throw fail("bad last segment '" + fields[2] + "'");
    if (v.last_anomalous_segment < v.first_anomalous_segment)
      throw fail("segment run ends before it starts");
    const std::string& cells = fields[3];
    std::size_t start = 0;
    for (std::size_t pos = 0; pos <= cells.size(); ++pos) {
      if (pos == cells.size() || cells[pos] == ',') {
        const std::string item = cells.substr(start, pos - start);
        std::uint32_t c = 0;
        if (!detail::parse_u32(item, c)) throw fail("bad cell index '" + item + "'");
        v.cells.push_back(c);
        start = pos + 1;
      }
    }
    std::sort(v.cells.begin(), v.cells.end());
    if (std::adjacent_find(v.cells.begin(), v.cells.end()) != v.cells.end())
      throw fail("duplicate cell index");
    truth.videos.push_back(std::move(v));
  }
  return truth;
}

}  // namespace stmil
