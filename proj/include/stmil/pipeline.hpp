#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "stmil/bagging.hpp"
#include "stmil/errors.hpp"
#include "stmil/eval.hpp"
#include "stmil/fcub.hpp"
#include "stmil/manifest.hpp"
#include "stmil/net.hpp"
#include "stmil/synthetic.hpp"
#include "stmil/train.hpp"

namespace stmil {

/// Loader resolving manifest paths against a base directory.
template <typename Scalar = float>
CuboidLoader<Scalar> make_file_loader(const std::filesystem::path& base) {
  return [base](const ManifestEntry& entry) {
    return read_cuboid<Scalar>(resolve_cuboid_path(base, entry.cuboid_path));
  };
}

/// Converts planted truth into evaluation ground truth: one temporal
/// interval spanning the anomalous segment run, plus one box per frame and
/// planted cell covering that cell's pixel region.
inline std::vector<AnnotationTrack> planted_to_tracks(
    const PlantedTruth& truth, const GridGeometry& geom,
    std::uint32_t frames_per_segment = kFramesPerSegment) {
  geom.validate();
  if (frames_per_segment == 0)
    throw FormatError("planted_to_tracks: frames per segment must be positive");
  const std::uint32_t grid = geom.grid_extent();
  std::vector<AnnotationTrack> tracks;
  tracks.reserve(truth.videos.size());
  for (const auto& v : truth.videos) {
    AnnotationTrack t;
    t.video_id = v.video_id;
    const std::uint32_t first_frame = v.first_anomalous_segment * frames_per_segment;
    const std::uint32_t end_frame = (v.last_anomalous_segment + 1) * frames_per_segment;
    t.intervals.emplace_back(first_frame, end_frame);
    for (std::uint32_t f = first_frame; f < end_frame; ++f) {
      for (auto cell : v.cells) {
        if (cell >= std::uint64_t(grid) * grid)
          throw FormatError("planted_to_tracks: cell index " +
                            std::to_string(cell) + " outside grid");
        const PixelRegion r =
            cell_to_pixel_region(cell / grid, cell % grid, geom);
        t.boxes.push_back(FrameBox{f, r.x_min, r.y_min, r.x_max, r.y_max});
      }
    }
    detail::normalize_track(t);
    tracks.push_back(std::move(t));
  }
  std::sort(tracks.begin(), tracks.end(),
            [](const AnnotationTrack& a, const AnnotationTrack& b) {
              return a.video_id < b.video_id;
            });
  return tracks;
}

/// Generates a full synthetic dataset directory: feature files, planted
/// truth, derived annotations, and the manifest. The manifest is written
/// last so a failed run never leaves one behind.
inline std::pair<DatasetManifest, PlantedTruth> synth_dataset(
    const SyntheticSpec& spec, const GridGeometry& geom,
    const std::filesystem::path& out_dir,
    std::uint32_t frames_per_segment = kFramesPerSegment) {
  auto [manifest, truth] = generate_synthetic(spec, out_dir);
  save_planted_truth(truth, out_dir / "truth.txt");
  write_annotations(planted_to_tracks(truth, geom, frames_per_segment),
                    out_dir / "annotations.txt");
  save_manifest(manifest, out_dir / "manifest.txt");
  return {std::move(manifest), std::move(truth)};
}

namespace detail {

inline void require_plain_file_name(const std::string& video_id) {
  if (video_id.empty() || video_id == "." || video_id == ".." ||
      video_id.find_first_of("/\\") != std::string::npos)
    throw FormatError("video id '" + video_id + "' not usable as a file name");
}

}  // namespace detail

/// Scores every manifest segment in EVAL mode and groups the results per
/// video. Each video's segment indices must be contiguous from 0.
template <typename Scalar>
std::map<std::string, ScoreMap> score_manifest(const Classifier<Scalar>& net,
                                               const DatasetManifest& manifest,
                                               const CuboidLoader<Scalar>& loader,
                                               std::uint32_t cell_size) {
  validate_manifest(manifest);
  if (cell_size == 0) throw FormatError("score: cell size must be positive");
  std::map<std::string, std::map<std::uint32_t, std::vector<double>>> by_video;
  std::map<std::string, std::pair<std::uint32_t, std::uint32_t>> grids;
  for (const auto& entry : manifest.entries) {
    const Tensor4<Scalar> cuboid = loader(entry);
    const PooledBag<Scalar> pb = pool_cuboid_cells(cuboid, cell_size);
    const VectorX<Scalar> s = forward_eval(net, pb.features);
    std::vector<double> cells(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i)
      cells[i] = static_cast<double>(s[i]);
    by_video[entry.video_id][entry.segment_index] = std::move(cells);
    grids[entry.video_id] = {pb.grid_h, pb.grid_w};
  }
  std::map<std::string, ScoreMap> maps;
  for (auto& [id, segs] : by_video) {
    ScoreMap map;
    map.video_id = id;
    map.grid_h = grids[id].first;
    map.grid_w = grids[id].second;
    std::uint32_t expect = 0;
    for (auto& [seg, cells] : segs) {
      if (seg != expect)
        throw FormatError("score: video " + id + ": missing segment index " +
                          std::to_string(expect));
      map.segments.push_back(std::move(cells));
      ++expect;
    }
    map.validate();
    maps.emplace(id, std::move(map));
  }
  return maps;
}

/// One `<video_id>.scores` file per video.
inline void write_score_dir(const std::map<std::string, ScoreMap>& maps,
                            const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("write_score_dir: cannot create " + dir.string() + ": " +
                  ec.message());
  for (const auto& [id, map] : maps) {
    detail::require_plain_file_name(id);
    write_score_file(map, dir / (id + ".scores"));
  }
}

inline std::map<std::string, ScoreMap> read_score_dir(
    const std::filesystem::path& dir, std::uint32_t grid_h, std::uint32_t grid_w) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("read_score_dir: not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".scores")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::map<std::string, ScoreMap> maps;
  for (const auto& f : files)
    maps.emplace(f.stem().string(),
                 read_score_file(f, f.stem().string(), grid_h, grid_w));
  if (maps.empty())
    throw FormatError("read_score_dir: no .scores files in " + dir.string());
  return maps;
}

struct EvalResult {
  double frame_auc = 0.0;
  std::optional<double> hit_rate;  // present when boxes were evaluated
  RocCurve roc;
};

/// Joins score maps with annotation tracks on video id, expands both to
/// frame level, and computes frame-level ROC/AUC plus, when any joined
/// track has boxes, the localization hit rate. Scored videos without a
/// track count as fully normal. When `out_dir` is given, writes `roc.csv`
/// and a `<video_id>_curve.csv` per scored video.
inline EvalResult evaluate_scores(
    const std::map<std::string, ScoreMap>& maps,
    const std::vector<AnnotationTrack>& tracks, const GridGeometry& geom,
    std::uint32_t frames_per_segment = kFramesPerSegment,
    const std::optional<std::filesystem::path>& out_dir = std::nullopt,
    std::ostream* warn = nullptr) {
  geom.validate();
  if (maps.empty()) throw FormatError("evaluate: no score maps");
  std::map<std::string, const AnnotationTrack*> track_by_id;
  for (const auto& t : tracks) track_by_id[t.video_id] = &t;

  if (!tracks.empty()) {
    bool any_joined = false;
    for (const auto& [id, map] : maps)
      if (track_by_id.count(id)) {
        any_joined = true;
        break;
      }
    if (!any_joined)
      throw FormatError("evaluate: score files and annotations share no video ids");
  }

  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    if (ec)
      throw IoError("evaluate: cannot create " + out_dir->string() + ": " +
                    ec.message());
  }

  const AnnotationTrack empty_track;
  std::vector<double> all_scores;
  std::vector<std::uint8_t> all_gt;
  bool any_boxes = false;
  for (const auto& [id, map] : maps) {
    const AnnotationTrack* track = &empty_track;
    if (const auto it = track_by_id.find(id); it != track_by_id.end()) {
      track = it->second;
      if (!track->boxes.empty()) any_boxes = true;
    }
    const std::vector<double> scores = frame_scores(map, frames_per_segment);
    const std::vector<std::uint8_t> gt =
        frame_ground_truth(*track, scores.size(), warn);
    all_scores.insert(all_scores.end(), scores.begin(), scores.end());
    all_gt.insert(all_gt.end(), gt.begin(), gt.end());
    if (out_dir) {
      detail::require_plain_file_name(id);
      export_curves(map, *track, *out_dir / (id + "_curve.csv"),
                    frames_per_segment, warn);
    }
  }

  EvalResult result;
  result.roc = roc_auc(all_scores, all_gt);
  result.frame_auc = result.roc.auc;
  if (any_boxes)
    result.hit_rate =
        localization_hit_rate(maps, tracks, geom, frames_per_segment);

  if (out_dir) {
    std::ofstream os(*out_dir / "roc.csv", std::ios::trunc);
    if (!os) throw IoError("evaluate: cannot open " + (*out_dir / "roc.csv").string());
    os << "fpr,tpr\n";
    char buf[32];
    for (const auto& [fpr, tpr] : result.roc.points) {
      std::snprintf(buf, sizeof(buf), "%.6g", fpr);
      os << buf << ',';
      std::snprintf(buf, sizeof(buf), "%.6g", tpr);
      os << buf << '\n';
    }
    if (!os)
      throw IoError("evaluate: short write to " + (*out_dir / "roc.csv").string());
  }
  return result;
}

/// Builds a training-time callback that scores a held-out manifest and
/// returns its frame-level AUC. Features are pooled once up front.
template <typename Scalar>
EvalCallback<Scalar> make_holdout_auc(const DatasetManifest& manifest,
                                      const CuboidLoader<Scalar>& loader,
                                      const std::vector<AnnotationTrack>& tracks,
                                      const GridGeometry& geom,
                                      std::uint32_t cell_size,
                                      std::uint32_t frames_per_segment = kFramesPerSegment) {
  validate_manifest(manifest);
  if (manifest.entries.empty())
    throw FormatError("holdout eval: empty manifest");
  struct Pooled {
    std::string video_id;
    std::uint32_t segment_index;
    PooledBag<Scalar> bag;
  };
  auto pooled = std::make_shared<std::vector<Pooled>>();
  pooled->reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries)
    pooled->push_back(Pooled{entry.video_id, entry.segment_index,
                             pool_cuboid_cells(loader(entry), cell_size)});
  auto tracks_copy = std::make_shared<std::vector<AnnotationTrack>>(tracks);
  return [pooled, tracks_copy, geom,
          frames_per_segment](const Classifier<Scalar>& net) {
    std::map<std::string, std::map<std::uint32_t, std::vector<double>>> by_video;
    std::map<std::string, std::pair<std::uint32_t, std::uint32_t>> grids;
    for (const auto& p : *pooled) {
      const VectorX<Scalar> s = forward_eval(net, p.bag.features);
      std::vector<double> cells(s.size());
      for (Eigen::Index i = 0; i < s.size(); ++i)
        cells[i] = static_cast<double>(s[i]);
      by_video[p.video_id][p.segment_index] = std::move(cells);
      grids[p.video_id] = {p.bag.grid_h, p.bag.grid_w};
    }
    std::map<std::string, ScoreMap> maps;
    for (auto& [id, segs] : by_video) {
      ScoreMap map;
      map.video_id = id;
      map.grid_h = grids[id].first;
      map.grid_w = grids[id].second;
      std::uint32_t expect = 0;
      for (auto& [seg, cells] : segs) {
        if (seg != expect)
          throw FormatError("holdout eval: video " + id +
                            ": missing segment index " + std::to_string(expect));
        map.segments.push_back(std::move(cells));
        ++expect;
      }
      maps.emplace(id, std::move(map));
    }
    return evaluate_scores(maps, *tracks_copy, geom, frames_per_segment)
        .frame_auc;
  };
}

}  // namespace stmil
