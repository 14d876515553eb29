#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stmil/eval.hpp"
#include "stmil/rng.hpp"
#include "test_util.hpp"

using namespace stmil;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

// Literal transcription of the AUC definition: fraction of positive/negative
// pairs ranked correctly, half credit for ties.
double pairwise_auc(const std::vector<double>& scores,
                    const std::vector<std::uint8_t>& labels) {
  double num = 0.0;
  std::uint64_t p = 0, n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    labels[i] ? ++p : ++n;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j])
        num += 1.0;
      else if (scores[i] == scores[j])
        num += 0.5;
    }
  }
  return num / (static_cast<double>(p) * static_cast<double>(n));
}

ScoreMap simple_map(std::vector<std::vector<double>> segments,
                    std::uint32_t grid_h, std::uint32_t grid_w,
                    std::string id = "vid") {
  ScoreMap m;
  m.video_id = std::move(id);
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  m.segments = std::move(segments);
  return m;
}

}  // namespace

TEST_CASE("annotations parse into normalized tracks") {
  testutil::TempDir dir("ann");
  const auto path = dir / "annotations.txt";
  testutil::write_file(path,
                       "# ground truth\n"
                       "T Arrest001 120 300\n"
                       "B Arrest001 130 10 20 60 90\n"
                       "T Arrest001 15 30\n"
                       "T Arrest001 10 20\n"
                       "B Arrest001 125 0 0 5 5\n"
                       "T Walk002 5 6\n");
  const auto tracks = parse_annotations(path);
  REQUIRE(tracks.size() == 2);
  REQUIRE(tracks[0].video_id == "Arrest001");
  REQUIRE(tracks[1].video_id == "Walk002");
  // Overlapping intervals merged, all sorted.
  REQUIRE(tracks[0].intervals ==
          std::vector<std::pair<std::uint32_t, std::uint32_t>>{{10, 30}, {120, 300}});
  REQUIRE(tracks[0].boxes.size() == 2);
  REQUIRE(tracks[0].boxes[0].frame == 125);
  REQUIRE(tracks[1].intervals.size() == 1);
  REQUIRE(tracks[1].boxes.empty());

  SECTION("touching intervals merge") {
    testutil::write_file(path, "T v 10 20\nT v 20 30\n");
    const auto t = parse_annotations(path);
    REQUIRE(t[0].intervals ==
            std::vector<std::pair<std::uint32_t, std::uint32_t>>{{10, 30}});
  }
  SECTION("round trip is canonical and byte-stable") {
    write_annotations(tracks, dir / "out.txt");
    const auto again = parse_annotations(dir / "out.txt");
    REQUIRE(again.size() == tracks.size());
    REQUIRE(again[0].intervals == tracks[0].intervals);
    REQUIRE(again[0].boxes == tracks[0].boxes);
    write_annotations(again, dir / "out2.txt");
    REQUIRE(testutil::read_file(dir / "out.txt") ==
            testutil::read_file(dir / "out2.txt"));
  }
  SECTION("malformed records are rejected with their line number") {
    testutil::write_file(path, "T v 10 20\nT v 30 30\n");
    REQUIRE_THROWS_MATCHES(parse_annotations(path), FormatError,
                           MessageMatches(ContainsSubstring(":2:") &&
                                          ContainsSubstring("must exceed start")));
    testutil::write_file(path, "T v 10\n");
    REQUIRE_THROWS_MATCHES(parse_annotations(path), FormatError,
                           MessageMatches(ContainsSubstring("4 fields")));
    testutil::write_file(path, "B v 5 10 10 10 40\n");
    REQUIRE_THROWS_MATCHES(parse_annotations(path), FormatError,
                           MessageMatches(ContainsSubstring("degenerate box")));
    testutil::write_file(path, "B v 5 10 10 40\n");
    REQUIRE_THROWS_MATCHES(parse_annotations(path), FormatError,
                           MessageMatches(ContainsSubstring("7 fields")));
    testutil::write_file(path, "X v 1 2\n");
    REQUIRE_THROWS_MATCHES(parse_annotations(path), FormatError,
                           MessageMatches(ContainsSubstring("unknown record type 'X'")));
    testutil::write_file(path, "T v abc 20\n");
    REQUIRE_THROWS_MATCHES(parse_annotations(path), FormatError,
                           MessageMatches(ContainsSubstring("bad start frame")));
    REQUIRE_THROWS_AS(parse_annotations(dir / "missing.txt"), IoError);
  }
  SECTION("writer rejects unrepresentable ids") {
    AnnotationTrack t;
    t.video_id = "two words";
    t.intervals = {{0, 1}};
    REQUIRE_THROWS_AS(write_annotations({t}, dir / "bad.txt"), FormatError);
  }
}

TEST_CASE("segment scores expand to frames") {
  SECTION("one segment repeats its maximum 64 times") {
    const auto m = simple_map({{0.3, 0.7, 0.1, 0.2}}, 2, 2);
    const auto fs = frame_scores(m);
    REQUIRE(fs.size() == 64);
    for (double v : fs) REQUIRE(v == 0.7);
  }
  SECTION("segment boundaries step at multiples of the segment length") {
    const auto m = simple_map({{0.1}, {0.9}}, 1, 1);
    const auto fs = frame_scores(m);
    REQUIRE(fs.size() == 128);
    REQUIRE(fs[63] == 0.1);
    REQUIRE(fs[64] == 0.9);
  }
  SECTION("matches a direct frame loop on random maps") {
    Rng rng(70);
    std::vector<std::vector<double>> segs(5, std::vector<double>(6));
    for (auto& s : segs)
      for (auto& v : s) v = rng.uniform01();
    const auto m = simple_map(segs, 2, 3);
    const auto fs = frame_scores(m, 10);
    REQUIRE(fs.size() == 50);
    for (std::size_t f = 0; f < fs.size(); ++f)
      REQUIRE(fs[f] == m.segment_score(f / 10));
  }
  SECTION("trailing frames inherit the last segment") {
    const auto m = simple_map({{0.2}, {0.8}}, 1, 1);
    const auto fs = frame_scores(m, 64, 200);
    REQUIRE(fs.size() == 200);
    REQUIRE(fs[63] == 0.2);
    REQUIRE(fs[127] == 0.8);
    REQUIRE(fs[199] == 0.8);
    const auto cut = frame_scores(m, 64, 70);
    REQUIRE(cut.size() == 70);
    REQUIRE(cut[69] == 0.8);
  }
  SECTION("degenerate maps are rejected") {
    REQUIRE_THROWS_AS(frame_scores(simple_map({}, 1, 1)), FormatError);
    REQUIRE_THROWS_AS(frame_scores(simple_map({{0.5}}, 1, 1), 0), FormatError);
    REQUIRE_THROWS_AS(frame_scores(simple_map({{1.5}}, 1, 1)), FormatError);
    REQUIRE_THROWS_AS(frame_scores(simple_map({{0.5, 0.5}}, 1, 1)), FormatError);
  }
}

TEST_CASE("ground-truth frames come from the intervals") {
  AnnotationTrack t;
  t.video_id = "v";
  t.intervals = {{10, 20}, {30, 40}};
  const auto gt = frame_ground_truth(t, 50);
  REQUIRE(gt.size() == 50);
  std::size_t ones = 0;
  for (auto b : gt) ones += b;
  REQUIRE(ones == 20);
  REQUIRE(gt[9] == 0);
  REQUIRE(gt[10] == 1);
  REQUIRE(gt[19] == 1);
  REQUIRE(gt[20] == 0);
  REQUIRE(gt[39] == 1);
  REQUIRE(gt[40] == 0);

  SECTION("intervals past the end are clipped with a warning") {
    AnnotationTrack long_t;
    long_t.video_id = "v";
    long_t.intervals = {{40, 80}};
    std::ostringstream warn;
    const auto clipped = frame_ground_truth(long_t, 50, &warn);
    std::size_t n = 0;
    for (auto b : clipped) n += b;
    REQUIRE(n == 10);
    REQUIRE_THAT(warn.str(), ContainsSubstring("clipped"));
  }
}

TEST_CASE("AUC is exact") {
  SECTION("perfect separation") {
    const std::vector<double> s{0.9, 0.8, 0.2, 0.1};
    const std::vector<std::uint8_t> l{1, 1, 0, 0};
    const auto curve = roc_auc(s, l);
    REQUIRE(curve.auc == 1.0);
    REQUIRE(roc_auc({0.1, 0.2, 0.8, 0.9}, l).auc == 0.0);
  }
  SECTION("constant scores give exactly one half") {
    REQUIRE(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}).auc == 0.5);
  }
  SECTION("matches the pairwise statistic on tied random data") {
    Rng rng(71);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> s;
      std::vector<std::uint8_t> l;
      for (int i = 0; i < 200; ++i) {
        s.push_back(static_cast<double>(rng.below(10)) / 10.0);  // forces ties
        l.push_back(rng.bernoulli(0.5) ? 1 : 0);
      }
      l[0] = 1;  // both classes present
      l[1] = 0;
      const auto curve = roc_auc(s, l);
      const double oracle = pairwise_auc(s, l);
      REQUIRE(curve.auc == Catch::Approx(oracle).margin(1e-12));
    }
  }
  SECTION("the curve runs from the origin to (1,1) monotonically") {
    Rng rng(72);
    std::vector<double> s;
    std::vector<std::uint8_t> l;
    for (int i = 0; i < 100; ++i) {
      s.push_back(rng.uniform01());
      l.push_back(rng.bernoulli(0.3) ? 1 : 0);
    }
    l[0] = 1;
    l[1] = 0;
    const auto curve = roc_auc(s, l);
    REQUIRE(curve.points.front() == std::pair{0.0, 0.0});
    REQUIRE(curve.points.back() == std::pair{1.0, 1.0});
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
      REQUIRE(curve.points[i].first >= curve.points[i - 1].first);
      REQUIRE(curve.points[i].second >= curve.points[i - 1].second);
    }
  }
  SECTION("invariant under increasing transforms and flipped by complement") {
    Rng rng(73);
    std::vector<double> s;
    std::vector<std::uint8_t> l, flipped;
    for (int i = 0; i < 150; ++i) {
      s.push_back(static_cast<double>(rng.below(20)) / 20.0);
      l.push_back(rng.bernoulli(0.4) ? 1 : 0);
    }
    l[0] = 1;
    l[1] = 0;
    for (auto b : l) flipped.push_back(b ? 0 : 1);
    std::vector<double> mapped;
    for (double v : s) mapped.push_back(0.1 + 0.5 * v);  // order and ties kept
    const double base = roc_auc(s, l).auc;
    REQUIRE(roc_auc(mapped, l).auc == base);
    REQUIRE(roc_auc(s, flipped).auc == Catch::Approx(1.0 - base).margin(1e-15));
  }
  SECTION("input validation") {
    REQUIRE_THROWS_MATCHES(roc_auc({0.5, 0.6}, {1, 1}), FormatError,
                           MessageMatches(ContainsSubstring("both classes")));
    REQUIRE_THROWS_MATCHES(roc_auc({0.5, 0.6}, {0, 0}), FormatError,
                           MessageMatches(ContainsSubstring("both classes")));
    REQUIRE_THROWS_AS(roc_auc({0.5}, {1, 0}), FormatError);
    REQUIRE_THROWS_AS(roc_auc({}, {}), FormatError);
    REQUIRE_THROWS_AS(roc_auc({0.5, 0.5}, {1, 2}), FormatError);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(roc_auc({nan, 0.5}, {1, 0}), NumericError);
  }
}

TEST_CASE("localization credits frames whose argmax cell touches a box") {
  GridGeometry geom;  // 7x7 cells of 32 px
  // One segment; the top-right corner cell (6,6) wins.
  std::vector<double> cells(49, 0.1);
  cells[48] = 0.9;
  std::map<std::string, ScoreMap> maps;
  maps["v"] = simple_map({cells}, 7, 7, "v");

  AnnotationTrack t;
  t.video_id = "v";
  t.intervals = {{0, 64}};
  SECTION("a far-away box misses") {
    t.boxes = {{0, 0, 0, 10, 10}};
    REQUIRE(localization_hit_rate(maps, {t}, geom) == 0.0);
  }
  SECTION("a box inside the winning region hits") {
    t.boxes = {{0, 200, 200, 210, 210}};
    REQUIRE(localization_hit_rate(maps, {t}, geom) == 1.0);
  }
  SECTION("each annotated frame counts once, any box can hit") {
    t.boxes = {{0, 0, 0, 10, 10},        // miss
               {0, 200, 200, 210, 210},  // hit, same frame
               {5, 0, 0, 10, 10}};       // second frame, miss
    REQUIRE(localization_hit_rate(maps, {t}, geom) == 0.5);
  }
  SECTION("frames past the scored range use the last segment") {
    t.boxes = {{500, 193, 193, 200, 200}};
    REQUIRE(localization_hit_rate(maps, {t}, geom) == 1.0);
  }
  SECTION("tracks without score files are skipped, none at all is an error") {
    AnnotationTrack other = t;
    other.video_id = "unscored";
    other.boxes = {{0, 0, 0, 10, 10}};
    t.boxes = {{0, 200, 200, 210, 210}};
    REQUIRE(localization_hit_rate(maps, {t, other}, geom) == 1.0);
    REQUIRE_THROWS_MATCHES(localization_hit_rate(maps, {other}, geom), FormatError,
                           MessageMatches(ContainsSubstring("no annotated frames")));
    REQUIRE_THROWS_AS(localization_hit_rate(maps, {}, geom), FormatError);
  }
}

TEST_CASE("curve export writes one row per frame") {
  testutil::TempDir dir("curves");
  const auto m = simple_map({{0.25}, {0.75}}, 1, 1);
  AnnotationTrack t;
  t.video_id = "vid";
  t.intervals = {{64, 128}};
  const auto path = dir / "vid_curve.csv";
  export_curves(m, t, path);

  const auto text = testutil::read_file(path);
  REQUIRE_THAT(text, ContainsSubstring("frame,ground_truth,score\n"));
  REQUIRE_THAT(text, ContainsSubstring("0,0,0.25\n"));
  REQUIRE_THAT(text, ContainsSubstring("63,0,0.25\n"));
  REQUIRE_THAT(text, ContainsSubstring("64,1,0.75\n"));
  REQUIRE_THAT(text, ContainsSubstring("127,1,0.75\n"));

  const auto data = read_curves(path);
  REQUIRE(data.frames.size() == 128);
  const auto gt = frame_ground_truth(t, 128);
  for (std::size_t f = 0; f < 128; ++f) {
    REQUIRE(data.frames[f] == f);
    REQUIRE(data.ground_truth[f] == gt[f]);
    REQUIRE(data.scores[f] == (f < 64 ? 0.25 : 0.75));
  }
  SECTION("export is byte-stable") {
    export_curves(m, t, dir / "again.csv");
    REQUIRE(testutil::read_file(dir / "again.csv") == text);
  }
  SECTION("malformed curve files are rejected") {
    testutil::write_file(dir / "bad.csv", "frame,score\n0,0,0.5\n");
    REQUIRE_THROWS_MATCHES(read_curves(dir / "bad.csv"), FormatError,
                           MessageMatches(ContainsSubstring("missing curve header")));
    testutil::write_file(dir / "bad.csv", "frame,ground_truth,score\n0,0\n");
    REQUIRE_THROWS_MATCHES(read_curves(dir / "bad.csv"), FormatError,
                           MessageMatches(ContainsSubstring("expected 3")));
    testutil::write_file(dir / "bad.csv", "frame,ground_truth,score\n0,2,0.5\n");
    REQUIRE_THROWS_MATCHES(read_curves(dir / "bad.csv"), FormatError,
                           MessageMatches(ContainsSubstring("ground truth must be 0 or 1")));
    testutil::write_file(dir / "bad.csv", "frame,ground_truth,score\nz,0,0.5\n");
    REQUIRE_THROWS_AS(read_curves(dir / "bad.csv"), FormatError);
  }
}

TEST_CASE("score files round-trip") {
  testutil::TempDir dir("scores");
  const auto path = dir / "vid.scores";
  SECTION("layout is one segment per line") {
    write_score_file(simple_map({{0.5, 0.25}}, 1, 2), path);
    REQUIRE(testutil::read_file(path) == "0 0.5 0.25\n");
  }
  SECTION("random maps survive write and read") {
    Rng rng(74);
    std::vector<std::vector<double>> segs(4, std::vector<double>(49));
    for (auto& s : segs)
      for (auto& v : s) v = rng.uniform01();
    const auto m = simple_map(segs, 7, 7);
    write_score_file(m, path);
    const auto back = read_score_file(path, "vid", 7, 7);
    REQUIRE(back.segments.size() == 4);
    write_score_file(back, dir / "again.scores");
    REQUIRE(testutil::read_file(dir / "again.scores") == testutil::read_file(path));
    // 9 significant digits keep the max (and its argmax) intact.
    for (std::size_t s = 0; s < 4; ++s)
      REQUIRE(back.segment_argmax(s) == m.segment_argmax(s));
  }
  SECTION("malformed score files are rejected") {
    testutil::write_file(path, "0 0.5\n");
    REQUIRE_THROWS_MATCHES(read_score_file(path, "v", 1, 2), FormatError,
                           MessageMatches(ContainsSubstring("expected 3 fields, got 2")));
    testutil::write_file(path, "x 0.5 0.5\n");
    REQUIRE_THROWS_MATCHES(read_score_file(path, "v", 1, 2), FormatError,
                           MessageMatches(ContainsSubstring("bad segment index")));
    testutil::write_file(path, "1 0.5 0.5\n");
    REQUIRE_THROWS_MATCHES(read_score_file(path, "v", 1, 2), FormatError,
                           MessageMatches(ContainsSubstring("out of order")));
    testutil::write_file(path, "0 0.5 abc\n");
    REQUIRE_THROWS_MATCHES(read_score_file(path, "v", 1, 2), FormatError,
                           MessageMatches(ContainsSubstring("bad score")));
    testutil::write_file(path, "0 0.5 1.5\n");
    REQUIRE_THROWS_MATCHES(read_score_file(path, "v", 1, 2), FormatError,
                           MessageMatches(ContainsSubstring("out of [0,1]")));
    REQUIRE_THROWS_AS(read_score_file(dir / "missing.scores", "v", 1, 2), IoError);
  }
  SECTION("writer validates the map") {
    REQUIRE_THROWS_AS(write_score_file(simple_map({{1.5}}, 1, 1), path), FormatError);
    REQUIRE_THROWS_AS(write_score_file(simple_map({{0.5, 0.5}}, 1, 1), path),
                      FormatError);
  }
}
