#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "stmil/bagging.hpp"
#include "stmil/errors.hpp"
#include "stmil/manifest.hpp"

namespace stmil {

inline constexpr std::uint32_t kFramesPerSegment = 64;

/// Ground-truth bounding box for one frame, pixel units, half-open.
struct FrameBox {
  std::uint32_t frame = 0;
  std::uint32_t x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  PixelRegion region() const { return PixelRegion{x_min, y_min, x_max, y_max}; }
  friend bool operator==(const FrameBox&, const FrameBox&) = default;
  friend auto operator<=>(const FrameBox&, const FrameBox&) = default;
};

/// Per-video ground truth: anomalous frame intervals (half-open, sorted,
/// non-overlapping after normalization) and optional per-frame boxes.
struct AnnotationTrack {
  std::string video_id;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> intervals;
  std::vector<FrameBox> boxes;
};

namespace detail {

inline bool parse_f64(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

inline void normalize_track(AnnotationTrack& t) {
  std::sort(t.intervals.begin(), t.intervals.end());
  std::vector<std::pair<std::uint32_t, std::uint32_t>> merged;
  for (const auto& iv : t.intervals) {
    // Touching intervals merge too: the frame sets are equivalent.
    if (!merged.empty() && iv.first <= merged.back().second)
      merged.back().second = std::max(merged.back().second, iv.second);
    else
      merged.push_back(iv);
  }
  t.intervals = std::move(merged);
  std::sort(t.boxes.begin(), t.boxes.end());
}

}  // namespace detail

/// Parses the annotation text format: `T <video_id> <start> <end>` declares
/// an anomalous frame interval [start, end); `B <video_id> <frame> <x_min>
/// <y_min> <x_max> <y_max>` a ground-truth box. Lines whose first token
/// starts with '#' are comments. Tracks come back sorted by video id with
/// overlapping intervals merged. Videos absent from the file are fully
/// normal by convention and simply have no track.
inline std::vector<AnnotationTrack> parse_annotations(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("parse_annotations: cannot open " + path.string());
  std::map<std::string, AnnotationTrack> by_video;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> FormatError {
    return FormatError(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  auto field_u32 = [&](const std::string& f, const char* name) {
    std::uint32_t v = 0;
    if (!detail::parse_u32(f, v)) throw fail(std::string("bad ") + name + " '" + f + "'");
    return v;
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty() || fields[0][0] == '#') continue;
    if (fields[0] == "T") {
      if (fields.size() != 4)
        throw fail("T record needs 4 fields, got " + std::to_string(fields.size()));
      const auto start = field_u32(fields[2], "start frame");
      const auto end = field_u32(fields[3], "end frame");
      if (end <= start)
        throw fail("interval end " + std::to_string(end) +
                   " must exceed start " + std::to_string(start));
      auto& t = by_video[fields[1]];
      t.video_id = fields[1];
      t.intervals.emplace_back(start, end);
    } else if (fields[0] == "B") {
      if (fields.size() != 7)
        throw fail("B record needs 7 fields, got " + std::to_string(fields.size()));
      FrameBox b;
      b.frame = field_u32(fields[2], "frame");
      b.x_min = field_u32(fields[3], "x_min");
      b.y_min = field_u32(fields[4], "y_min");
      b.x_max = field_u32(fields[5], "x_max");
      b.y_max = field_u32(fields[6], "y_max");
      if (b.x_max <= b.x_min || b.y_max <= b.y_min) throw fail("degenerate box");
      auto& t = by_video[fields[1]];
      t.video_id = fields[1];
      t.boxes.push_back(b);
    } else {
      throw fail("unknown record type '" + fields[0] + "'");
    }
  }
  std::vector<AnnotationTrack> tracks;
  tracks.reserve(by_video.size());
  for (auto& [id, t] : by_video) {
    detail::normalize_track(t);
    tracks.push_back(std::move(t));
  }
  return tracks;
}

/// Writes tracks in canonical form (sorted by video id, intervals merged,
/// T records before B records per video); output re-reads identically.
inline void write_annotations(std::vector<AnnotationTrack> tracks,
                              const std::filesystem::path& path) {
  std::sort(tracks.begin(), tracks.end(),
            [](const AnnotationTrack& a, const AnnotationTrack& b) {
              return a.video_id < b.video_id;
            });
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("write_annotations: cannot open " + path.string());
  for (auto& t : tracks) {
    if (t.video_id.empty() ||
        t.video_id.find_first_of(" \t\r\n") != std::string::npos)
      throw FormatError("write_annotations: video id '" + t.video_id +
                        "' not representable");
    detail::normalize_track(t);
    for (const auto& iv : t.intervals)
      os << "T " << t.video_id << ' ' << iv.first << ' ' << iv.second << '\n';
    for (const auto& b : t.boxes)
      os << "B " << t.video_id << ' ' << b.frame << ' ' << b.x_min << ' '
         << b.y_min << ' ' << b.x_max << ' ' << b.y_max << '\n';
  }
  if (!os) throw IoError("write_annotations: short write to " + path.string());
}

/// Per-segment cell scores of one video, cells in row-major grid order.
struct ScoreMap {
  std::string video_id;
  std::uint32_t grid_h = 0, grid_w = 0;
  std::vector<std::vector<double>> segments;

  void validate() const {
    if (grid_h == 0 || grid_w == 0)
      throw FormatError("score map: grid dimensions must be positive");
    const std::size_t cells = std::size_t(grid_h) * grid_w;
    for (const auto& seg : segments) {
      if (seg.size() != cells)
        throw FormatError("score map: segment cell count does not match grid");
      for (double s : seg)
        if (!(s >= 0.0 && s <= 1.0))
          throw FormatError("score map: score out of [0,1]");
    }
  }

  /// Segment score: maximum over the segment's cells.
  double segment_score(std::size_t seg) const {
    const auto& s = segments.at(seg);
    return *std::max_element(s.begin(), s.end());
  }

  /// First cell index attaining the segment maximum.
  std::size_t segment_argmax(std::size_t seg) const {
    const auto& s = segments.at(seg);
    return static_cast<std::size_t>(
        std::max_element(s.begin(), s.end()) - s.begin());
  }
};

/// Score file: one line per segment, `<segment_index> <score_0> ...`,
/// indices 0..n-1 in order, scores at 9 significant digits.
inline void write_score_file(const ScoreMap& map,
                             const std::filesystem::path& path) {
  map.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("write_score_file: cannot open " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < map.segments.size(); ++i) {
    os << i;
    for (double s : map.segments[i]) {
      std::snprintf(buf, sizeof(buf), " %.9g", s);
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw IoError("write_score_file: short write to " + path.string());
}

inline ScoreMap read_score_file(const std::filesystem::path& path,
                                const std::string& video_id,
                                std::uint32_t grid_h, std::uint32_t grid_w) {
  if (grid_h == 0 || grid_w == 0)
    throw FormatError("read_score_file: grid dimensions must be positive");
  std::ifstream is(path);
  if (!is) throw IoError("read_score_file: cannot open " + path.string());
  ScoreMap map;
  map.video_id = video_id;
  map.grid_h = grid_h;
  map.grid_w = grid_w;
  const std::size_t cells = std::size_t(grid_h) * grid_w;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    auto fail = [&](const std::string& what) -> FormatError {
      return FormatError(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    if (fields.size() != cells + 1)
      throw fail("expected " + std::to_string(cells + 1) + " fields, got " +
                 std::to_string(fields.size()));
    std::uint32_t seg = 0;
    if (!detail::parse_u32(fields[0], seg))
      throw fail("bad segment index '" + fields[0] + "'");
    if (seg != map.segments.size())
      throw fail("segment index " + std::to_string(seg) +
                 " out of order, expected " + std::to_string(map.segments.size()));
    std::vector<double> scores(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      if (!detail::parse_f64(fields[c + 1], scores[c]))
        throw fail("bad score '" + fields[c + 1] + "'");
      if (!(scores[c] >= 0.0 && scores[c] <= 1.0))
        throw fail("score out of [0,1]: '" + fields[c + 1] + "'");
    }
    map.segments.push_back(std::move(scores));
  }
  return map;
}

/// Expands segment scores to frames: frame f receives segment ⌊f/fps⌋'s
/// score (the max over that segment's cells). Length = n_segments * fps.
inline std::vector<double> frame_scores(
    const ScoreMap& map, std::uint32_t frames_per_segment = kFramesPerSegment) {
  map.validate();
  if (frames_per_segment == 0)
    throw FormatError("frame_scores: frames per segment must be positive");
  if (map.segments.empty()) throw FormatError("frame_scores: no segments");
  std::vector<double> out;
  out.reserve(map.segments.size() * frames_per_segment);
  for (std::size_t s = 0; s < map.segments.size(); ++s)
    out.insert(out.end(), frames_per_segment, map.segment_score(s));
  return out;
}

/// Variant for videos whose frame count is not n_segments * fps: trailing
/// frames inherit the last segment's score, excess segments are dropped.
inline std::vector<double> frame_scores(const ScoreMap& map,
                                        std::uint32_t frames_per_segment,
                                        std::size_t n_frames) {
  map.validate();
  if (frames_per_segment == 0)
    throw FormatError("frame_scores: frames per segment must be positive");
  if (map.segments.empty()) throw FormatError("frame_scores: no segments");
  std::vector<double> out(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t seg =
        std::min<std::size_t>(f / frames_per_segment, map.segments.size() - 1);
    out[f] = map.segment_score(seg);
  }
  return out;
}

/// Binary per-frame ground truth from a track's intervals. Intervals
/// reaching past n_frames are clipped; a note goes to `warn` when given.
inline std::vector<std::uint8_t> frame_ground_truth(const AnnotationTrack& track,
                                                    std::size_t n_frames,
                                                    std::ostream* warn = nullptr) {
  std::vector<std::uint8_t> gt(n_frames, 0);
  for (const auto& iv : track.intervals) {
    if (iv.second > n_frames && warn)
      *warn << "warning: " << track.video_id << ": interval [" << iv.first
            << "," << iv.second << ") clipped to " << n_frames << " frames\n";
    const std::size_t end = std::min<std::size_t>(iv.second, n_frames);
    for (std::size_t f = iv.first; f < end; ++f) gt[f] = 1;
  }
  return gt;
}

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr)
  double auc = 0.0;
};

/// ROC curve by threshold sweep and AUC by trapezoid. The area accumulates
/// in integers (2·P·N·AUC is a whole number), which makes it exactly the
/// Mann-Whitney statistic with half credit for ties.
inline RocCurve roc_auc(const std::vector<double>& scores,
                        const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw FormatError("roc_auc: scores and labels differ in length");
  if (scores.empty()) throw FormatError("roc_auc: empty input");
  std::uint64_t p_total = 0, n_total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("roc_auc: non-finite score");
    if (labels[i] > 1) throw FormatError("roc_auc: labels must be 0 or 1");
    labels[i] ? ++p_total : ++n_total;
  }
  if (p_total == 0 || n_total == 0)
    throw FormatError("roc_auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  RocCurve curve;
  curve.points.emplace_back(0.0, 0.0);
  std::uint64_t tp = 0, fp = 0;
  unsigned __int128 twice_area = 0;  // sum of d_fp * (tp_prev + tp)
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::uint64_t d_tp = 0, d_fp = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      labels[order[j]] ? ++d_tp : ++d_fp;
      ++j;
    }
    twice_area += static_cast<unsigned __int128>(d_fp) * (2 * tp + d_tp);
    tp += d_tp;
    fp += d_fp;
    curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(n_total),
                              static_cast<double>(tp) / static_cast<double>(p_total));
    i = j;
  }
  curve.auc = static_cast<double>(twice_area) /
              (2.0 * static_cast<double>(p_total) * static_cast<double>(n_total));
  return curve;
}

/// Fraction of box-annotated frames whose segment-argmax cell region
/// intersects a ground-truth box of that frame. Videos are joined on id;
/// frames past the scored range fall back to the last segment.
inline double localization_hit_rate(const std::map<std::string, ScoreMap>& maps,
                                    const std::vector<AnnotationTrack>& tracks,
                                    const GridGeometry& geom,
                                    std::uint32_t frames_per_segment = kFramesPerSegment) {
  geom.validate();
  if (frames_per_segment == 0)
    throw FormatError("localization: frames per segment must be positive");
  std::uint64_t frames_seen = 0, hits = 0;
  for (const auto& track : tracks) {
    if (track.boxes.empty()) continue;
    const auto it = maps.find(track.video_id);
    if (it == maps.end()) continue;
    const ScoreMap& map = it->second;
    map.validate();
    if (map.segments.empty()) continue;
    // Boxes are sorted by frame; walk groups of one frame each.
    std::size_t b = 0;
    while (b < track.boxes.size()) {
      std::size_t e = b;
      while (e < track.boxes.size() && track.boxes[e].frame == track.boxes[b].frame)
        ++e;
      const std::size_t seg = std::min<std::size_t>(
          track.boxes[b].frame / frames_per_segment, map.segments.size() - 1);
      const std::size_t arg = map.segment_argmax(seg);
      const auto cell_row = static_cast<std::uint32_t>(arg / map.grid_w);
      const auto cell_col = static_cast<std::uint32_t>(arg % map.grid_w);
      const PixelRegion region = cell_to_pixel_region(cell_row, cell_col, geom);
      ++frames_seen;
      for (std::size_t k = b; k < e; ++k) {
        if (region.intersects(track.boxes[k].region())) {
          ++hits;
          break;
        }
      }
      b = e;
    }
  }
  if (frames_seen == 0)
    throw FormatError("localization: no annotated frames to evaluate");
  return static_cast<double>(hits) / static_cast<double>(frames_seen);
}

/// Per-frame curve export, comma-separated with header
/// `frame,ground_truth,score`, one row per frame of the scored range.
inline void export_curves(const ScoreMap& map, const AnnotationTrack& track,
                          const std::filesystem::path& path,
                          std::uint32_t frames_per_segment = kFramesPerSegment,
                          std::ostream* warn = nullptr) {
  const std::vector<double> scores = frame_scores(map, frames_per_segment);
  const std::vector<std::uint8_t> gt =
      frame_ground_truth(track, scores.size(), warn);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("export_curves: cannot open " + path.string());
  os << "frame,ground_truth,score\n";
  char buf[32];
  for (std::size_t f = 0; f < scores.size(); ++f) {
    std::snprintf(buf, sizeof(buf), "%.6g", scores[f]);
    os << f << ',' << unsigned(gt[f]) << ',' << buf << '\n';
  }
  if (!os) throw IoError("export_curves: short write to " + path.string());
}

struct CurveData {
  std::vector<std::uint32_t> frames;
  std::vector<std::uint8_t> ground_truth;
  std::vector<double> scores;
};

inline CurveData read_curves(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_curves: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "frame,ground_truth,score")
    throw FormatError(path.string() + ": missing curve header");
  CurveData data;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) -> FormatError {
      return FormatError(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t pos = 0; pos <= line.size(); ++pos) {
      if (pos == line.size() || line[pos] == ',') {
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
      }
    }
    if (fields.size() != 3)
      throw fail("expected 3 comma-separated fields, got " +
                 std::to_string(fields.size()));
    std::uint32_t frame = 0;
    if (!detail::parse_u32(fields[0], frame)) throw fail("bad frame '" + fields[0] + "'");
    if (fields[1] != "0" && fields[1] != "1")
      throw fail("ground truth must be 0 or 1, got '" + fields[1] + "'");
    double score = 0.0;
    if (!detail::parse_f64(fields[2], score)) throw fail("bad score '" + fields[2] + "'");
    data.frames.push_back(frame);
    data.ground_truth.push_back(fields[1] == "1" ? 1 : 0);
    data.scores.push_back(score);
  }
  return data;
}

}  // namespace stmil
