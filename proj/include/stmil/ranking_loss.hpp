#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "stmil/errors.hpp"
#include "stmil/net.hpp"

namespace stmil {

/// Hyper-parameters of the instance-ranking objective.
struct RankingLossConfig {
  double margin = 1.0;
  double sparsity = 0.0;    // L1 pressure on positive-bag scores
  double smoothness = 0.0;  // squared difference over 4-neighbor grid edges
  double weight_decay = 0.0;

  void validate() const {
    if (!(margin >= 0.0)) throw FormatError("loss: margin must be >= 0");
    if (!(sparsity >= 0.0)) throw FormatError("loss: sparsity weight must be >= 0");
    if (!(smoothness >= 0.0)) throw FormatError("loss: smoothness weight must be >= 0");
    if (!(weight_decay >= 0.0)) throw FormatError("loss: weight decay must be >= 0");
  }
};

/// Instance scores of one bag arranged on its spatial grid, with the bag
/// maximum precomputed. Instance i sits at cell (i / grid_w, i % grid_w).
template <typename Scalar>
struct BagScores {
  VectorX<Scalar> scores;
  std::uint32_t grid_h = 0, grid_w = 0;
  Scalar max_score = Scalar(0);
  Eigen::Index argmax_index = 0;
};

/// Wraps raw instance scores; ties resolve to the lowest index.
template <typename Scalar>
BagScores<Scalar> make_bag_scores(const VectorX<Scalar>& scores,
                                  std::uint32_t grid_h, std::uint32_t grid_w) {
  if (grid_h == 0 || grid_w == 0)
    throw FormatError("bag scores: grid dimensions must be positive");
  if (scores.size() !=
      static_cast<Eigen::Index>(std::uint64_t(grid_h) * grid_w))
    throw FormatError("bag scores: score count does not match grid");
  BagScores<Scalar> b;
  b.scores = scores;
  b.grid_h = grid_h;
  b.grid_w = grid_w;
  b.max_score = scores[0];
  b.argmax_index = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i) {
    if (scores[i] > b.max_score) {
      b.max_score = scores[i];
      b.argmax_index = i;
    }
  }
  return b;
}

template <typename Scalar>
struct RankingLossResult {
  double loss = 0.0;
  VectorX<Scalar> d_pos;  // d loss / d positive-bag scores
  VectorX<Scalar> d_neg;  // d loss / d negative-bag scores
};

/// Ranking objective over one positive/negative bag pair:
///   max(0, margin - max(pos) + max(neg))
///   + sparsity * sum(pos)
///   + smoothness * sum over grid edges (pos_a - pos_b)^2.
/// The hinge routes gradient only through each bag's argmax instance; the
/// regularizers touch positive-bag scores only. Weight decay is not part of
/// this value; the trainer applies it to parameters directly.
template <typename Scalar>
RankingLossResult<Scalar> ranking_loss(const BagScores<Scalar>& pos,
                                       const BagScores<Scalar>& neg,
                                       const RankingLossConfig& cfg) {
  cfg.validate();
  if (pos.scores.size() == 0 || neg.scores.size() == 0)
    throw FormatError("loss: empty bag");

  RankingLossResult<Scalar> r;
  r.d_pos = VectorX<Scalar>::Zero(pos.scores.size());
  r.d_neg = VectorX<Scalar>::Zero(neg.scores.size());

  const double hinge = cfg.margin - static_cast<double>(pos.max_score) +
                       static_cast<double>(neg.max_score);
  if (hinge > 0.0) {
    r.loss += hinge;
    r.d_pos[pos.argmax_index] -= Scalar(1);
    r.d_neg[neg.argmax_index] += Scalar(1);
  }

  if (cfg.sparsity > 0.0) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pos.scores.size(); ++i)
      sum += static_cast<double>(pos.scores[i]);
    r.loss += cfg.sparsity * sum;
    r.d_pos.array() += static_cast<Scalar>(cfg.sparsity);
  }

  if (cfg.smoothness > 0.0) {
    // Each undirected edge counted once: right and down neighbors.
    const auto h = pos.grid_h, w = pos.grid_w;
    if (std::uint64_t(h) * w != std::uint64_t(pos.scores.size()))
      throw FormatError("loss: positive bag grid does not match score count");
    double acc = 0.0;
    auto at = [&](std::uint32_t rr, std::uint32_t cc) {
      return static_cast<double>(pos.scores[rr * w + cc]);
    };
    for (std::uint32_t rr = 0; rr < h; ++rr) {
      for (std::uint32_t cc = 0; cc < w; ++cc) {
        const double a = at(rr, cc);
        if (cc + 1 < w) {
          const double d = a - at(rr, cc + 1);
          acc += d * d;
          r.d_pos[rr * w + cc] += static_cast<Scalar>(2.0 * cfg.smoothness * d);
          r.d_pos[rr * w + cc + 1] -= static_cast<Scalar>(2.0 * cfg.smoothness * d);
        }
        if (rr + 1 < h) {
          const double d = a - at(rr + 1, cc);
          acc += d * d;
          r.d_pos[rr * w + cc] += static_cast<Scalar>(2.0 * cfg.smoothness * d);
          r.d_pos[(rr + 1) * w + cc] -= static_cast<Scalar>(2.0 * cfg.smoothness * d);
        }
      }
    }
    r.loss += cfg.smoothness * acc;
  }
  return r;
}

}  // namespace stmil
