#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stmil/bagging.hpp"
#include "stmil/errors.hpp"
#include "stmil/manifest.hpp"
#include "stmil/net.hpp"
#include "stmil/ranking_loss.hpp"
#include "stmil/rng.hpp"

namespace stmil {

enum class Optimizer { kSgd, kAdagrad };

struct TrainConfig {
  std::uint32_t pairs_per_batch = 30;
  double learning_rate = 0.001;
  Optimizer optimizer = Optimizer::kAdagrad;
  std::uint32_t iterations = 300;
  std::uint64_t seed = 0;
  std::uint32_t eval_every = 50;  // 0 disables mid-run evaluation
  std::uint32_t cell_size = 2;

  void validate() const {
    if (pairs_per_batch == 0) throw FormatError("train: pairs_per_batch must be positive");
    if (!(learning_rate > 0.0)) throw FormatError("train: learning rate must be positive");
    if (cell_size == 0) throw FormatError("train: cell size must be positive");
  }
};

struct TrainRecord {
  std::uint32_t iteration = 0;  // 1-based
  double mean_loss = 0.0;
  std::optional<double> eval_auc;
};

using TrainingLog = std::vector<TrainRecord>;

/// One sampled positive/negative bag pair, as indices into manifest entries.
struct PairSample {
  std::size_t pos_index = 0;
  std::size_t neg_index = 0;
};

/// Uniform sampling with replacement: for each pair one positive draw then
/// one negative draw. Both classes must be present.
inline std::vector<PairSample> sample_pairs(const DatasetManifest& manifest,
                                            std::uint32_t n_pairs, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    if (manifest.entries[i].label == VideoLabel::kAnomalous)
      pos.push_back(i);
    else
      neg.push_back(i);
  }
  if (pos.empty()) throw FormatError("sample_pairs: manifest has no anomalous videos");
  if (neg.empty()) throw FormatError("sample_pairs: manifest has no normal videos");
  std::vector<PairSample> out(n_pairs);
  for (auto& p : out) {
    p.pos_index = pos[rng.below(pos.size())];
    p.neg_index = neg[rng.below(neg.size())];
  }
  return out;
}

/// Scores every instance of a bag through the EVAL-mode forward pass.
template <typename Scalar>
BagScores<Scalar> score_bag(const Classifier<Scalar>& net, const Bag<Scalar>& bag) {
  const MatrixX<Scalar> batch = pool_bag(bag);
  const VectorX<Scalar> scores = forward_eval(net, batch);
  return make_bag_scores(scores, bag.grid_h, bag.grid_w);
}

/// Pooled features of one segment's spatial cells: one row per cell in
/// row-major grid order.
template <typename Scalar>
struct PooledBag {
  MatrixX<Scalar> features;
  std::uint32_t grid_h = 0, grid_w = 0;
};

template <typename Scalar>
PooledBag<Scalar> pool_cuboid_cells(const Tensor4<Scalar>& cuboid,
                                    std::uint32_t cell_size) {
  FeatureCuboid<Scalar> fc;
  fc.data = cuboid;
  const Bag<Scalar> bag = make_bag(fc, VideoLabel::kNormal, cell_size);
  PooledBag<Scalar> pb;
  pb.features = pool_bag(bag);
  pb.grid_h = bag.grid_h;
  pb.grid_w = bag.grid_w;
  return pb;
}

template <typename Scalar>
struct TrainResult {
  Classifier<Scalar> net;
  TrainingLog log;
};

template <typename Scalar>
using CuboidLoader = std::function<Tensor4<Scalar>(const ManifestEntry&)>;
template <typename Scalar>
using EvalCallback = std::function<double(const Classifier<Scalar>&)>;

namespace detail {

template <typename Scalar>
struct AdagradState {
  ParamGrads<Scalar> accum;
  explicit AdagradState(const Classifier<Scalar>& net)
      : accum(ParamGrads<Scalar>::zeros_like(net)) {}
};

template <typename Scalar>
void adagrad_update(MatrixX<Scalar>& param, MatrixX<Scalar>& accum,
                    const MatrixX<Scalar>& grad, Scalar lr) {
  accum.array() += grad.array().square();
  param.array() -= lr * grad.array() / (accum.array() + Scalar(1e-8)).sqrt();
}

template <typename Scalar>
void adagrad_update(VectorX<Scalar>& param, VectorX<Scalar>& accum,
                    const VectorX<Scalar>& grad, Scalar lr) {
  accum.array() += grad.array().square();
  param.array() -= lr * grad.array() / (accum.array() + Scalar(1e-8)).sqrt();
}

// Gradient step over every trainable parameter. Running batch-norm
// statistics are not parameters and are untouched here.
template <typename Scalar>
void apply_update(Classifier<Scalar>& net, const ParamGrads<Scalar>& grads,
                  AdagradState<Scalar>* adagrad, Scalar lr) {
  if (adagrad) {
    for (std::size_t k = 0; k < net.hidden.size(); ++k) {
      adagrad_update(net.hidden[k].weight, adagrad->accum.hidden[k].weight,
                     grads.hidden[k].weight, lr);
      adagrad_update(net.hidden[k].bias, adagrad->accum.hidden[k].bias,
                     grads.hidden[k].bias, lr);
      adagrad_update(net.hidden[k].gamma, adagrad->accum.hidden[k].gamma,
                     grads.hidden[k].gamma, lr);
      adagrad_update(net.hidden[k].beta, adagrad->accum.hidden[k].beta,
                     grads.hidden[k].beta, lr);
    }
    adagrad_update(net.out_weight, adagrad->accum.out_weight, grads.out_weight, lr);
    adagrad_update(net.out_bias, adagrad->accum.out_bias, grads.out_bias, lr);
  } else {
    for (std::size_t k = 0; k < net.hidden.size(); ++k) {
      net.hidden[k].weight -= lr * grads.hidden[k].weight;
      net.hidden[k].bias -= lr * grads.hidden[k].bias;
      net.hidden[k].gamma -= lr * grads.hidden[k].gamma;
      net.hidden[k].beta -= lr * grads.hidden[k].beta;
    }
    net.out_weight -= lr * grads.out_weight;
    net.out_bias -= lr * grads.out_bias;
  }
}

}  // namespace detail

/// Trains the classifier by instance ranking over sampled bag pairs.
///
/// Deterministic given the config seed: the master stream first yields the
/// parameter-init seed, then drives pair sampling and dropout in iteration
/// order. All segment features are pooled once up front. Weight decay adds
/// `weight_decay * W` to the mean gradient of every weight matrix (biases
/// and batch-norm parameters excluded). The eval callback, when given, runs
/// at every `eval_every`-th iteration and at the last one.
template <typename Scalar>
TrainResult<Scalar> train(const DatasetManifest& manifest,
                          const CuboidLoader<Scalar>& loader,
                          const TrainConfig& cfg, const RankingLossConfig& loss_cfg,
                          const NetConfig& net_cfg,
                          const EvalCallback<Scalar>& eval = {}) {
  cfg.validate();
  loss_cfg.validate();
  net_cfg.validate();
  validate_manifest(manifest);
  if (manifest.entries.empty()) throw FormatError("train: empty manifest");

  std::vector<PooledBag<Scalar>> pooled(manifest.entries.size());
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const Tensor4<Scalar> cuboid = loader(manifest.entries[i]);
    if (cuboid.channels() != net_cfg.widths.front())
      throw FormatError("train: cuboid channel count " +
                        std::to_string(cuboid.channels()) +
                        " does not match net input width " +
                        std::to_string(net_cfg.widths.front()));
    pooled[i] = pool_cuboid_cells(cuboid, cfg.cell_size);
    if (pooled[i].grid_h != pooled[0].grid_h || pooled[i].grid_w != pooled[0].grid_w)
      throw FormatError("train: inconsistent grid shape across segments");
  }

  Rng master(cfg.seed);
  const std::uint64_t init_seed = master.next_u64();

  TrainResult<Scalar> result;
  result.net = init_classifier<Scalar>(init_seed, net_cfg);
  auto& net = result.net;

  std::optional<detail::AdagradState<Scalar>> adagrad;
  if (cfg.optimizer == Optimizer::kAdagrad) adagrad.emplace(net);
  const auto lr = static_cast<Scalar>(cfg.learning_rate);

  for (std::uint32_t iter = 1; iter <= cfg.iterations; ++iter) {
    const auto pairs = sample_pairs(manifest, cfg.pairs_per_batch, master);
    ParamGrads<Scalar> total = ParamGrads<Scalar>::zeros_like(net);
    double loss_sum = 0.0;

    for (const auto& pair : pairs) {
      const auto& pb = pooled[pair.pos_index];
      const auto& nb = pooled[pair.neg_index];
      try {
        ForwardTape<Scalar> pos_tape, neg_tape;
        const VectorX<Scalar> pos_scores =
            forward_train(net, pb.features, master, pos_tape);
        const VectorX<Scalar> neg_scores =
            forward_train(net, nb.features, master, neg_tape);
        const auto pos_bag = make_bag_scores(pos_scores, pb.grid_h, pb.grid_w);
        const auto neg_bag = make_bag_scores(neg_scores, nb.grid_h, nb.grid_w);
        const auto loss = ranking_loss(pos_bag, neg_bag, loss_cfg);
        loss_sum += loss.loss;
        total.add(backward(net, pos_tape, loss.d_pos).params);
        total.add(backward(net, neg_tape, loss.d_neg).params);
      } catch (const NumericError& e) {
        throw NumericError(
            "iteration " + std::to_string(iter) + " (pos " +
            manifest.entries[pair.pos_index].video_id + " seg " +
            std::to_string(manifest.entries[pair.pos_index].segment_index) +
            ", neg " + manifest.entries[pair.neg_index].video_id + " seg " +
            std::to_string(manifest.entries[pair.neg_index].segment_index) +
            "): " + e.what());
      }
    }

    total.scale(Scalar(1) / static_cast<Scalar>(cfg.pairs_per_batch));
    const double mean_loss = loss_sum / static_cast<double>(cfg.pairs_per_batch);
    if (!std::isfinite(mean_loss))
      throw NumericError("iteration " + std::to_string(iter) +
                         ": non-finite mean loss");

    if (loss_cfg.weight_decay > 0.0) {
      const auto wd = static_cast<Scalar>(loss_cfg.weight_decay);
      for (std::size_t k = 0; k < net.hidden.size(); ++k)
        total.hidden[k].weight += wd * net.hidden[k].weight;
      total.out_weight += wd * net.out_weight;
    }

    detail::apply_update(net, total, adagrad ? &*adagrad : nullptr, lr);

    TrainRecord rec;
    rec.iteration = iter;
    rec.mean_loss = mean_loss;
    if (eval && ((cfg.eval_every > 0 && iter % cfg.eval_every == 0) ||
                 iter == cfg.iterations))
      rec.eval_auc = eval(net);
    result.log.push_back(rec);
  }
  return result;
}

/// Text training log, one record per line: iteration, mean loss, and the
/// evaluation value when one was recorded.
inline void save_training_log(const TrainingLog& log,
                              const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("save_training_log: cannot open " + path.string());
  char buf[64];
  for (const auto& r : log) {
    os << r.iteration;
    std::snprintf(buf, sizeof(buf), " %.9g", r.mean_loss);
    os << buf;
    if (r.eval_auc) {
      std::snprintf(buf, sizeof(buf), " %.9g", *r.eval_auc);
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw IoError("save_training_log: short write to " + path.string());
}

inline TrainingLog load_training_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_training_log: cannot open " + path.string());
  TrainingLog log;
  std::string line;
  std::size_t line_no = 0;
  auto parse_f64 = [&](const std::string& field) {
    double v = 0.0;
    const char* b = field.data();
    const char* e = b + field.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e)
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": bad numeric field '" + field + "'");
    return v;
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() < 2 || fields.size() > 3)
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 2 or 3 fields, got " +
                        std::to_string(fields.size()));
    TrainRecord r;
    if (!detail::parse_u32(fields[0], r.iteration))
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": bad iteration field '" + fields[0] + "'");
    r.mean_loss = parse_f64(fields[1]);
    if (fields.size() == 3) r.eval_auc = parse_f64(fields[2]);
    log.push_back(r);
  }
  return log;
}

}  // namespace stmil
