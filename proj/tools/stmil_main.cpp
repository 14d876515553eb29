// Command-line front end: synthesize datasets, train, score, evaluate.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stmil/stmil.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<std::uint32_t> parse_widths(const std::string& spec) {
  std::vector<std::uint32_t> widths;
  std::size_t start = 0;
  for (std::size_t pos = 0; pos <= spec.size(); ++pos) {
    if (pos == spec.size() || spec[pos] == ',') {
      const std::string item = spec.substr(start, pos - start);
      std::uint32_t w = 0;
      if (!stmil::detail::parse_u32(item, w))
        throw stmil::FormatError("bad width '" + item + "' in '" + spec + "'");
      widths.push_back(w);
      start = pos + 1;
    }
  }
  return widths;
}

struct SynthArgs {
  std::string out;
  stmil::SyntheticSpec spec;
  stmil::GridGeometry geom;
  std::uint32_t frames_per_segment = stmil::kFramesPerSegment;
};

int cmd_synth(const SynthArgs& a) {
  if (a.geom.feature_spatial != a.spec.dims[2] ||
      a.geom.feature_spatial != a.spec.dims[3])
    throw stmil::FormatError(
        "synth: --feature-spatial must equal the spatial feature dims");
  a.geom.validate();
  const auto [manifest, truth] = stmil::synth_dataset(
      a.spec, a.geom, a.out, a.frames_per_segment);
  std::printf("synth: %u normal + %u anomalous videos, %u segments each, dims %ux%ux%ux%u, shift %g\n",
              a.spec.n_normal_videos, a.spec.n_anomalous_videos,
              a.spec.segments_per_video, a.spec.dims[0], a.spec.dims[1],
              a.spec.dims[2], a.spec.dims[3], a.spec.shift);
  std::printf("synth: wrote %zu manifest entries under %s\n",
              manifest.entries.size(), a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string manifest;
  std::string features;  // empty: manifest's directory
  std::string checkpoint;
  std::string log;
  std::string eval_manifest;
  std::string eval_features;  // empty: eval manifest's directory
  std::string eval_annotations;
  std::string widths = "528,512,256,128,32,1";
  std::string optimizer = "adagrad";
  std::string precision = "float";
  stmil::TrainConfig train;
  stmil::RankingLossConfig loss;
  double dropout = 0.6;
  double bn_momentum = 0.1;
  stmil::GridGeometry geom;
  std::uint32_t frames_per_segment = stmil::kFramesPerSegment;
};

fs::path base_or_parent(const std::string& base, const std::string& file) {
  return base.empty() ? fs::path(file).parent_path() : fs::path(base);
}

template <typename Scalar>
int run_train(const TrainArgs& a) {
  const auto manifest =
      stmil::load_manifest(a.manifest, stmil::Split::kTrain);
  const auto loader =
      stmil::make_file_loader<Scalar>(base_or_parent(a.features, a.manifest));

  stmil::NetConfig net_cfg;
  net_cfg.widths = parse_widths(a.widths);
  net_cfg.dropout_rate = a.dropout;
  net_cfg.bn_momentum = a.bn_momentum;

  stmil::TrainConfig train_cfg = a.train;
  train_cfg.optimizer = a.optimizer == "sgd" ? stmil::Optimizer::kSgd
                                             : stmil::Optimizer::kAdagrad;

  stmil::EvalCallback<Scalar> eval_cb;
  if (!a.eval_manifest.empty()) {
    if (a.eval_annotations.empty())
      throw stmil::FormatError("train: --eval-manifest needs --eval-annotations");
    const auto eval_manifest =
        stmil::load_manifest(a.eval_manifest, stmil::Split::kTest);
    const auto eval_loader = stmil::make_file_loader<Scalar>(
        base_or_parent(a.eval_features, a.eval_manifest));
    const auto tracks = stmil::parse_annotations(a.eval_annotations);
    eval_cb = stmil::make_holdout_auc<Scalar>(eval_manifest, eval_loader, tracks,
                                              a.geom, train_cfg.cell_size,
                                              a.frames_per_segment);
  }

  const auto result =
      stmil::train<Scalar>(manifest, loader, train_cfg, a.loss, net_cfg, eval_cb);
  stmil::save_checkpoint(result.net, a.checkpoint);
  if (!a.log.empty()) stmil::save_training_log(result.log, a.log);

  if (!result.log.empty()) {
    std::printf("train: %u iterations, final mean loss %.9g\n",
                result.log.back().iteration, result.log.back().mean_loss);
    if (result.log.back().eval_auc)
      std::printf("train: held-out frame AUC %.9g\n",
                  *result.log.back().eval_auc);
  } else {
    std::printf("train: 0 iterations, checkpoint is the initialization\n");
  }
  std::printf("train: checkpoint written to %s\n", a.checkpoint.c_str());
  return 0;
}

struct ScoreArgs {
  std::string manifest;
  std::string features;
  std::string checkpoint;
  std::string out;
  std::string precision = "float";
  std::uint32_t cell_size = 2;
};

template <typename Scalar>
int run_score(const ScoreArgs& a) {
  const auto manifest = stmil::load_manifest(a.manifest, stmil::Split::kTest);
  const auto loader =
      stmil::make_file_loader<Scalar>(base_or_parent(a.features, a.manifest));
  const auto net = stmil::load_checkpoint<Scalar>(a.checkpoint);
  const auto maps =
      stmil::score_manifest<Scalar>(net, manifest, loader, a.cell_size);
  stmil::write_score_dir(maps, a.out);
  std::size_t segments = 0;
  for (const auto& [id, map] : maps) segments += map.segments.size();
  std::printf("score: %zu videos, %zu segments -> %s\n", maps.size(), segments,
              a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string scores;
  std::string annotations;
  std::string out;
  stmil::GridGeometry geom;
  std::uint32_t frames_per_segment = stmil::kFramesPerSegment;
};

int cmd_eval(const EvalArgs& a) {
  a.geom.validate();
  const std::uint32_t grid = a.geom.grid_extent();
  const auto maps = stmil::read_score_dir(a.scores, grid, grid);
  const auto tracks = stmil::parse_annotations(a.annotations);
  std::optional<fs::path> out_dir;
  if (!a.out.empty()) out_dir = fs::path(a.out);
  const auto result = stmil::evaluate_scores(maps, tracks, a.geom,
                                             a.frames_per_segment, out_dir,
                                             &std::cerr);
  std::printf("eval: frame AUC %.9g\n", result.frame_auc);
  if (result.hit_rate)
    std::printf("eval: localization hit rate %.9g\n", *result.hit_rate);
  if (out_dir)
    std::printf("eval: curves written to %s\n", out_dir->string().c_str());
  return 0;
}

void add_geometry_flags(CLI::App* cmd, stmil::GridGeometry& geom,
                        std::uint32_t& fps) {
  cmd->add_option("--frame-size", geom.frame_size, "Frame edge length in pixels");
  cmd->add_option("--feature-spatial", geom.feature_spatial,
                  "Spatial extent of the feature grid");
  cmd->add_option("--frames-per-segment", fps, "Frames covered by one segment");
}

// Appends `--key=value` for every `key = value` line of the files named by
// --config, skipping keys already given explicitly. The option parser does
// not read config files attached to subcommands, so they are expanded here
// before parsing, and explicit flags keep priority.
std::vector<std::string> with_config_args(std::vector<std::string> args) {
  std::vector<std::string> files;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      files.push_back(args[i + 1]);
    else if (args[i].rfind("--config=", 0) == 0)
      files.push_back(args[i].substr(9));
  }
  const auto trim = [](std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
      s.erase(s.begin());
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
      s.pop_back();
    return s;
  };
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw stmil::IoError("config: cannot open " + file);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      const std::string stripped = trim(line);
      if (stripped.empty() || stripped[0] == '#' || stripped[0] == ';') continue;
      const std::size_t eq = stripped.find('=');
      const std::string key =
          eq == std::string::npos ? std::string() : trim(stripped.substr(0, eq));
      std::string value =
          eq == std::string::npos ? std::string() : trim(stripped.substr(eq + 1));
      if (key.empty())
        throw stmil::FormatError("config: " + file + " line " +
                                 std::to_string(lineno) + ": expected key = value");
      if (value.size() >= 2 && value.back() == value.front() &&
          (value.front() == '"' || value.front() == '\''))
        value = value.substr(1, value.size() - 2);
      const std::string flag = "--" + key;
      bool given = false;
      for (const auto& a : args)
        if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
      if (!given) args.push_back(flag + "=" + value);
    }
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly-supervised spatial anomaly scoring over feature cuboids"};
  app.name("stmil");
  app.require_subcommand(1);
  std::string config_file;

  SynthArgs synth;
  auto* s = app.add_subcommand(
      "synth", "Generate a planted-anomaly synthetic dataset");
  s->add_option("--config", config_file, "Config file (key = value lines)");
  s->add_option("--out", synth.out, "Output dataset directory")->required();
  s->add_option("--seed", synth.spec.seed, "Generator seed");
  s->add_option("--normal", synth.spec.n_normal_videos, "Normal video count");
  s->add_option("--anomalous", synth.spec.n_anomalous_videos,
                "Anomalous video count");
  s->add_option("--segments", synth.spec.segments_per_video,
                "Segments per video");
  s->add_option("--channels", synth.spec.dims[0], "Feature channels");
  s->add_option("--time", synth.spec.dims[1], "Temporal feature extent");
  s->add_option("--height", synth.spec.dims[2], "Spatial feature height");
  s->add_option("--width", synth.spec.dims[3], "Spatial feature width");
  s->add_option("--cell", synth.spec.cell_size, "Cell edge in feature units");
  s->add_option("--delta", synth.spec.shift, "Mean shift of planted cells");
  s->add_option("--anomaly-cells", synth.spec.anomaly_cell_count,
                "Planted cells per anomalous video");
  add_geometry_flags(s, synth.geom, synth.frames_per_segment);
  s->callback([&] {
    synth.geom.cell_size = synth.spec.cell_size;
    cmd_synth(synth);
  });

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the anomaly-score classifier");
  t->add_option("--config", config_file, "Config file (key = value lines)");
  t->add_option("--manifest", train.manifest, "Training manifest")->required();
  t->add_option("--features", train.features,
                "Base directory for manifest paths (default: manifest's)");
  t->add_option("--checkpoint", train.checkpoint, "Checkpoint output path")
      ->required();
  t->add_option("--log", train.log, "Training log output path");
  t->add_option("--eval-manifest", train.eval_manifest,
                "Held-out manifest evaluated during training");
  t->add_option("--eval-features", train.eval_features,
                "Base directory for held-out manifest paths");
  t->add_option("--eval-annotations", train.eval_annotations,
                "Annotations for the held-out manifest");
  t->add_option("--seed", train.train.seed, "Training seed");
  t->add_option("--iterations", train.train.iterations, "Training iterations");
  t->add_option("--pairs", train.train.pairs_per_batch,
                "Bag pairs sampled per iteration");
  t->add_option("--lr", train.train.learning_rate, "Learning rate");
  t->add_option("--optimizer", train.optimizer, "Optimizer")
      ->check(CLI::IsMember({"sgd", "adagrad"}));
  t->add_option("--eval-every", train.train.eval_every,
                "Evaluate held-out AUC every N iterations (0: only at end)");
  t->add_option("--cell", train.train.cell_size, "Cell edge in feature units");
  t->add_option("--margin", train.loss.margin, "Ranking margin");
  t->add_option("--lambda-sparsity", train.loss.sparsity,
                "Sparsity weight on positive-bag scores");
  t->add_option("--lambda-smoothness", train.loss.smoothness,
                "Smoothness weight over grid neighbors");
  t->add_option("--weight-decay", train.loss.weight_decay, "Weight decay");
  t->add_option("--dropout", train.dropout, "Dropout rate");
  t->add_option("--bn-momentum", train.bn_momentum,
                "Batch-norm running-stat momentum");
  t->add_option("--widths", train.widths,
                "Comma-separated layer widths, input first, output 1");
  t->add_option("--precision", train.precision, "Arithmetic precision")
      ->check(CLI::IsMember({"float", "double"}));
  add_geometry_flags(t, train.geom, train.frames_per_segment);
  t->callback([&] {
    train.geom.cell_size = train.train.cell_size;
    if (train.precision == "double")
      run_train<double>(train);
    else
      run_train<float>(train);
  });

  ScoreArgs score;
  auto* c = app.add_subcommand("score",
                               "Score manifest segments with a checkpoint");
  c->add_option("--config", config_file, "Config file (key = value lines)");
  c->add_option("--manifest", score.manifest, "Manifest to score")->required();
  c->add_option("--features", score.features,
                "Base directory for manifest paths (default: manifest's)");
  c->add_option("--checkpoint", score.checkpoint, "Checkpoint path")->required();
  c->add_option("--out", score.out, "Score file output directory")->required();
  c->add_option("--cell", score.cell_size, "Cell edge in feature units");
  c->add_option("--precision", score.precision, "Arithmetic precision")
      ->check(CLI::IsMember({"float", "double"}));
  c->callback([&] {
    if (score.precision == "double")
      run_score<double>(score);
    else
      run_score<float>(score);
  });

  EvalArgs eval;
  auto* e = app.add_subcommand(
      "eval", "Frame-level ROC/AUC and localization from score files");
  e->add_option("--config", config_file, "Config file (key = value lines)");
  e->add_option("--scores", eval.scores, "Directory of .scores files")
      ->required();
  e->add_option("--annotations", eval.annotations, "Annotation file")
      ->required();
  e->add_option("--out", eval.out, "Directory for ROC and curve exports");
  e->add_option("--cell", eval.geom.cell_size, "Cell edge in feature units");
  add_geometry_flags(e, eval.geom, eval.frames_per_segment);
  e->callback([&] { cmd_eval(eval); });

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = with_config_args(std::move(args));
    std::reverse(args.begin(), args.end());  // the parser pops from the back
    app.parse(std::move(args));
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 1;
  } catch (const stmil::NumericError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 3;
  } catch (const stmil::Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  }
  return 0;
}
