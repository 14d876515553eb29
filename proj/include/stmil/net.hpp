#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "stmil/bagging.hpp"
#include "stmil/errors.hpp"
#include "stmil/fcub.hpp"
#include "stmil/rng.hpp"
#include "stmil/tensor.hpp"

namespace stmil {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

enum class Mode { kTrain, kEval };

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Shape and regularization settings of the anomaly-score classifier.
/// widths[0] is the pooled input dimension (the channel count), the last
/// width must be 1; everything in between is a hidden layer.
struct NetConfig {
  std::vector<std::uint32_t> widths{528, 512, 256, 128, 32, 1};
  double dropout_rate = 0.6;
  double bn_momentum = 0.1;

  void validate() const {
    if (widths.size() < 2) throw FormatError("net: need at least input and output widths");
    for (auto w : widths)
      if (w == 0) throw FormatError("net: widths must be positive");
    if (widths.back() != 1) throw FormatError("net: output width must be 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw FormatError("net: dropout rate must be in [0, 1)");
    if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0))
      throw FormatError("net: batch-norm momentum must be in [0, 1]");
  }
};

/// The anomaly-score classifier: per hidden layer an affine map, batch
/// normalization, ReLU, and (inverted) dropout; the output layer is affine
/// plus sigmoid. Weight matrices are (fan_out x fan_in); batches are rows.
template <typename Scalar>
struct Classifier {
  struct HiddenLayer {
    MatrixX<Scalar> weight;
    VectorX<Scalar> bias;
    VectorX<Scalar> gamma, beta;        // batch-norm scale/shift
    VectorX<Scalar> run_mean, run_var;  // running statistics, EVAL path
  };

  std::vector<std::uint32_t> widths;
  std::vector<HiddenLayer> hidden;
  MatrixX<Scalar> out_weight;  // 1 x last hidden width
  VectorX<Scalar> out_bias;    // size 1
  Scalar dropout_rate = Scalar(0.6);
  Scalar bn_momentum = Scalar(0.1);

  std::uint32_t input_width() const { return widths.front(); }

  void check_shapes() const {
    if (widths.size() < 2 || widths.back() != 1)
      throw FormatError("classifier: invalid width chain");
    if (hidden.size() != widths.size() - 2)
      throw FormatError("classifier: hidden layer count does not match widths");
    for (std::size_t k = 0; k < hidden.size(); ++k) {
      const auto& l = hidden[k];
      const auto in = static_cast<Eigen::Index>(widths[k]);
      const auto out = static_cast<Eigen::Index>(widths[k + 1]);
      if (l.weight.rows() != out || l.weight.cols() != in ||
          l.bias.size() != out || l.gamma.size() != out ||
          l.beta.size() != out || l.run_mean.size() != out ||
          l.run_var.size() != out)
        throw FormatError("classifier: shape mismatch in hidden layer " +
                          std::to_string(k));
    }
    const auto last = static_cast<Eigen::Index>(widths[widths.size() - 2]);
    if (out_weight.rows() != 1 || out_weight.cols() != last ||
        out_bias.size() != 1)
      throw FormatError("classifier: shape mismatch in output layer");
  }
};

/// Activation record for one reverse pass. Valid only between a TRAIN-mode
/// forward call and its matching backward call.
template <typename Scalar>
struct ForwardTape {
  struct LayerTape {
    MatrixX<Scalar> input;      // B x in
    MatrixX<Scalar> x_hat;      // normalized pre-activation
    RowVectorX<Scalar> inv_std; // 1 / sqrt(batch var + eps)
    MatrixX<Scalar> bn_out;     // gamma * x_hat + beta (pre-ReLU)
    MatrixX<Scalar> drop;       // dropout multipliers; empty when rate == 0
  };
  std::vector<LayerTape> layers;
  MatrixX<Scalar> last_activation;  // input to the output layer
  VectorX<Scalar> logits;
  VectorX<Scalar> scores;
  bool consumed = true;  // armed by forward_train
};

/// Parameter-shaped gradient container.
template <typename Scalar>
struct ParamGrads {
  struct LayerGrads {
    MatrixX<Scalar> weight;
    VectorX<Scalar> bias, gamma, beta;
  };
  std::vector<LayerGrads> hidden;
  MatrixX<Scalar> out_weight;
  VectorX<Scalar> out_bias;

  static ParamGrads zeros_like(const Classifier<Scalar>& net) {
    ParamGrads g;
    g.hidden.resize(net.hidden.size());
    for (std::size_t k = 0; k < net.hidden.size(); ++k) {
      const auto& l = net.hidden[k];
      g.hidden[k].weight = MatrixX<Scalar>::Zero(l.weight.rows(), l.weight.cols());
      g.hidden[k].bias = VectorX<Scalar>::Zero(l.bias.size());
      g.hidden[k].gamma = VectorX<Scalar>::Zero(l.gamma.size());
      g.hidden[k].beta = VectorX<Scalar>::Zero(l.beta.size());
    }
    g.out_weight = MatrixX<Scalar>::Zero(net.out_weight.rows(), net.out_weight.cols());
    g.out_bias = VectorX<Scalar>::Zero(net.out_bias.size());
    return g;
  }

  void add(const ParamGrads& o) {
    for (std::size_t k = 0; k < hidden.size(); ++k) {
      hidden[k].weight += o.hidden[k].weight;
      hidden[k].bias += o.hidden[k].bias;
      hidden[k].gamma += o.hidden[k].gamma;
      hidden[k].beta += o.hidden[k].beta;
    }
    out_weight += o.out_weight;
    out_bias += o.out_bias;
  }

  void scale(Scalar s) {
    for (auto& l : hidden) {
      l.weight *= s;
      l.bias *= s;
      l.gamma *= s;
      l.beta *= s;
    }
    out_weight *= s;
    out_bias *= s;
  }
};

template <typename Scalar>
struct BackwardResult {
  ParamGrads<Scalar> params;
  MatrixX<Scalar> input;  // d scores-objective / d pooled input, B x in
};

namespace detail {

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  if (z >= Scalar(0)) {
    const Scalar e = std::exp(-z);
    return Scalar(1) / (Scalar(1) + e);
  }
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

// Sigmoid saturates to exactly 0 or 1 in finite precision; scores are
// clamped into the open interval so downstream code can rely on (0,1).
template <typename Scalar>
Scalar clamp_open01(Scalar s) {
  const Scalar lo = std::numeric_limits<Scalar>::min();
  const Scalar hi = std::nextafter(Scalar(1), Scalar(0));
  return s < lo ? lo : (s > hi ? hi : s);
}

template <typename Scalar>
void require_finite(const MatrixX<Scalar>& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("forward: non-finite values " + where);
}

}  // namespace detail

/// 3D average pool: per-channel mean over all time and spatial positions.
template <typename Scalar>
VectorX<Scalar> pool(const Tensor4<Scalar>& instance_data) {
  if (!instance_data.shape_valid()) throw FormatError("pool: invalid tensor");
  const std::uint32_t channels = instance_data.channels();
  const std::size_t per_channel = instance_data.size() / channels;
  VectorX<Scalar> out(channels);
  for (std::uint32_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    const Scalar* p = instance_data.data.data() +
                      static_cast<std::size_t>(c) * per_channel;
    for (std::size_t i = 0; i < per_channel; ++i) acc += static_cast<double>(p[i]);
    out[c] = static_cast<Scalar>(acc / static_cast<double>(per_channel));
  }
  return out;
}

/// Gradient of pool with respect to its input: each element of channel c
/// receives upstream[c] / (T*h*w).
template <typename Scalar>
Tensor4<Scalar> pool_backward(const std::array<std::uint32_t, 4>& dims,
                              const VectorX<Scalar>& upstream) {
  if (upstream.size() != static_cast<Eigen::Index>(dims[0]))
    throw FormatError("pool_backward: upstream size does not match channels");
  Tensor4<Scalar> grad(dims[0], dims[1], dims[2], dims[3]);
  const std::size_t per_channel = grad.size() / dims[0];
  const Scalar inv = Scalar(1) / static_cast<Scalar>(per_channel);
  for (std::uint32_t c = 0; c < dims[0]; ++c) {
    Scalar* p = grad.data.data() + static_cast<std::size_t>(c) * per_channel;
    for (std::size_t i = 0; i < per_channel; ++i) p[i] = upstream[c] * inv;
  }
  return grad;
}

/// Pools every instance of a bag into one row of a (n_instances x C) batch,
/// preserving instance order.
template <typename Scalar>
MatrixX<Scalar> pool_bag(const Bag<Scalar>& bag) {
  if (bag.instances.empty()) throw FormatError("pool_bag: empty bag");
  const std::uint32_t channels = bag.instances.front().data.channels();
  MatrixX<Scalar> batch(bag.instances.size(), channels);
  for (std::size_t i = 0; i < bag.instances.size(); ++i)
    batch.row(i) = pool(bag.instances[i].data).transpose();
  return batch;
}

/// EVAL-mode forward pass: batch norm uses running statistics, dropout is
/// the identity. Pure and deterministic; safe to call concurrently against
/// shared frozen parameters.
template <typename Scalar>
VectorX<Scalar> forward_eval(const Classifier<Scalar>& net,
                             const MatrixX<Scalar>& input) {
  net.check_shapes();
  if (input.cols() != static_cast<Eigen::Index>(net.input_width()))
    throw FormatError("forward: input width " + std::to_string(input.cols()) +
                      " does not match net input " +
                      std::to_string(net.input_width()));
  if (input.rows() < 1) throw FormatError("forward: empty batch");
  detail::require_finite(input, "in input batch");

  const Scalar eps = static_cast<Scalar>(kBnEpsilon);
  MatrixX<Scalar> act = input;
  for (std::size_t k = 0; k < net.hidden.size(); ++k) {
    const auto& l = net.hidden[k];
    MatrixX<Scalar> z = act * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    const RowVectorX<Scalar> scale =
        ((l.run_var.transpose().array() + eps).rsqrt() *
         l.gamma.transpose().array())
            .matrix();
    z.rowwise() -= l.run_mean.transpose();
    z.array().rowwise() *= scale.array();
    z.rowwise() += l.beta.transpose();
    act = z.cwiseMax(Scalar(0));
    detail::require_finite(act, "after hidden layer " + std::to_string(k));
  }
  VectorX<Scalar> logits = act * net.out_weight.transpose();
  logits.array() += net.out_bias[0];
  VectorX<Scalar> scores(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(static_cast<double>(logits[i])))
      throw NumericError("forward: non-finite values after output layer");
    scores[i] = detail::clamp_open01(detail::sigmoid(logits[i]));
  }
  return scores;
}

/// TRAIN-mode forward pass: batch norm uses batch statistics and updates
/// the running statistics with momentum; dropout draws a fresh mask from
/// `rng` (inverted scaling, so EVAL needs no rescale). Fills `tape` for the
/// matching backward call. Requires batch size >= 2.
template <typename Scalar>
VectorX<Scalar> forward_train(Classifier<Scalar>& net, const MatrixX<Scalar>& input,
                              Rng& rng, ForwardTape<Scalar>& tape) {
  net.check_shapes();
  if (input.cols() != static_cast<Eigen::Index>(net.input_width()))
    throw FormatError("forward: input width " + std::to_string(input.cols()) +
                      " does not match net input " +
                      std::to_string(net.input_width()));
  if (input.rows() < 2)
    throw FormatError("forward: TRAIN mode needs batch size >= 2");
  detail::require_finite(input, "in input batch");

  const Scalar eps = static_cast<Scalar>(kBnEpsilon);
  const Scalar momentum = net.bn_momentum;
  const Scalar rate = net.dropout_rate;
  const auto batch = static_cast<Scalar>(input.rows());

  tape.layers.assign(net.hidden.size(), {});
  tape.consumed = false;

  MatrixX<Scalar> act = input;
  for (std::size_t k = 0; k < net.hidden.size(); ++k) {
    auto& l = net.hidden[k];
    auto& t = tape.layers[k];
    t.input = act;

    MatrixX<Scalar> z = act * l.weight.transpose();
    z.rowwise() += l.bias.transpose();

    const RowVectorX<Scalar> mean = z.colwise().sum() / batch;
    MatrixX<Scalar> centered = z.rowwise() - mean;
    const RowVectorX<Scalar> var =
        (centered.array().square().colwise().sum() / batch).matrix();  // biased
    t.inv_std = (var.array() + eps).rsqrt().matrix();
    t.x_hat = (centered.array().rowwise() * t.inv_std.array()).matrix();
    t.bn_out = (t.x_hat.array().rowwise() * l.gamma.transpose().array()).matrix();
    t.bn_out.rowwise() += l.beta.transpose();

    l.run_mean = (Scalar(1) - momentum) * l.run_mean + momentum * mean.transpose();
    l.run_var = ((Scalar(1) - momentum) * l.run_var + momentum * var.transpose())
                    .cwiseMax(eps);

    MatrixX<Scalar> h = t.bn_out.cwiseMax(Scalar(0));
    if (rate > Scalar(0)) {
      // Mask drawn row by row so the stream layout is fixed.
      t.drop.resize(h.rows(), h.cols());
      const Scalar keep_scale = Scalar(1) / (Scalar(1) - rate);
      for (Eigen::Index r = 0; r < h.rows(); ++r)
        for (Eigen::Index c = 0; c < h.cols(); ++c)
          t.drop(r, c) = rng.bernoulli(1.0 - static_cast<double>(rate))
                             ? keep_scale
                             : Scalar(0);
      act = h.cwiseProduct(t.drop);
    } else {
      t.drop.resize(0, 0);
      act = std::move(h);
    }
    detail::require_finite(act, "after hidden layer " + std::to_string(k));
  }

  tape.last_activation = act;
  tape.logits = act * net.out_weight.transpose();
  tape.logits.array() += net.out_bias[0];
  tape.scores.resize(tape.logits.size());
  for (Eigen::Index i = 0; i < tape.logits.size(); ++i) {
    if (!std::isfinite(static_cast<double>(tape.logits[i])))
      throw NumericError("forward: non-finite values after output layer");
    tape.scores[i] = detail::clamp_open01(detail::sigmoid(tape.logits[i]));
  }
  return tape.scores;
}

/// Reverse-mode gradients of the scores objective `sum_i upstream[i] *
/// score[i]` with respect to every parameter and the input batch, including
/// the batch-statistics terms of batch norm and the saved dropout mask.
/// Consumes the tape; reuse is an error.
template <typename Scalar>
BackwardResult<Scalar> backward(const Classifier<Scalar>& net,
                                ForwardTape<Scalar>& tape,
                                const VectorX<Scalar>& upstream) {
  if (tape.consumed) throw FormatError("backward: tape already consumed or never armed");
  tape.consumed = true;
  if (upstream.size() != tape.scores.size())
    throw FormatError("backward: upstream size does not match batch");

  BackwardResult<Scalar> result;
  result.params.hidden.resize(net.hidden.size());

  const VectorX<Scalar> d_logit =
      upstream.array() * tape.scores.array() * (Scalar(1) - tape.scores.array());
  result.params.out_weight = d_logit.transpose() * tape.last_activation;
  result.params.out_bias = VectorX<Scalar>::Constant(1, d_logit.sum());

  MatrixX<Scalar> d_act = d_logit * net.out_weight;  // B x last width
  for (std::size_t k = net.hidden.size(); k-- > 0;) {
    const auto& l = net.hidden[k];
    const auto& t = tape.layers[k];
    auto& g = result.params.hidden[k];
    const auto batch = static_cast<Scalar>(t.input.rows());

    MatrixX<Scalar> d_h;
    if (t.drop.size() > 0)
      d_h = d_act.cwiseProduct(t.drop);
    else
      d_h = std::move(d_act);
    MatrixX<Scalar> d_bn =
        d_h.cwiseProduct((t.bn_out.array() > Scalar(0)).template cast<Scalar>().matrix());

    g.gamma = d_bn.cwiseProduct(t.x_hat).colwise().sum().transpose();
    g.beta = d_bn.colwise().sum().transpose();

    MatrixX<Scalar> d_xhat =
        (d_bn.array().rowwise() * l.gamma.transpose().array()).matrix();
    const RowVectorX<Scalar> mean_dxhat = d_xhat.colwise().sum() / batch;
    const RowVectorX<Scalar> mean_dxhat_xhat =
        d_xhat.cwiseProduct(t.x_hat).colwise().sum() / batch;
    MatrixX<Scalar> d_z =
        (((d_xhat.rowwise() - mean_dxhat).array() -
          t.x_hat.array().rowwise() * mean_dxhat_xhat.array())
             .rowwise() *
         t.inv_std.array())
            .matrix();

    g.weight = d_z.transpose() * t.input;
    g.bias = d_z.colwise().sum().transpose();
    d_act = d_z * l.weight;
  }
  result.input = std::move(d_act);
  return result;
}

/// Fresh parameters: Xavier-uniform weights, zero biases, identity batch
/// norm (gamma 1, beta 0, mean 0, var 1). Pure function of the seed.
template <typename Scalar>
Classifier<Scalar> init_classifier(std::uint64_t seed, const NetConfig& config) {
  config.validate();
  Rng rng(seed);
  Classifier<Scalar> net;
  net.widths = config.widths;
  net.dropout_rate = static_cast<Scalar>(config.dropout_rate);
  net.bn_momentum = static_cast<Scalar>(config.bn_momentum);
  const std::size_t n_hidden = config.widths.size() - 2;
  net.hidden.resize(n_hidden);
  auto xavier_fill = [&rng](MatrixX<Scalar>& w) {
    const double bound =
        std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        w(r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
  };
  for (std::size_t k = 0; k < n_hidden; ++k) {
    auto& l = net.hidden[k];
    const auto in = static_cast<Eigen::Index>(config.widths[k]);
    const auto out = static_cast<Eigen::Index>(config.widths[k + 1]);
    l.weight.resize(out, in);
    xavier_fill(l.weight);
    l.bias = VectorX<Scalar>::Zero(out);
    l.gamma = VectorX<Scalar>::Ones(out);
    l.beta = VectorX<Scalar>::Zero(out);
    l.run_mean = VectorX<Scalar>::Zero(out);
    l.run_var = VectorX<Scalar>::Ones(out);
  }
  const auto last = static_cast<Eigen::Index>(config.widths[config.widths.size() - 2]);
  net.out_weight.resize(1, last);
  xavier_fill(net.out_weight);
  net.out_bias = VectorX<Scalar>::Zero(1);
  return net;
}

namespace detail {

template <typename Scalar>
void write_array_f32(std::ostream& os, const MatrixX<Scalar>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      put_f32_le(os, static_cast<float>(m(r, c)));
}

template <typename Scalar>
void write_array_f32(std::ostream& os, const VectorX<Scalar>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    put_f32_le(os, static_cast<float>(v[i]));
}

template <typename Scalar>
void read_array_f32(std::istream& is, MatrixX<Scalar>& m, const std::string& path) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      float f;
      if (!get_f32_le(is, f)) throw FormatError(path + ": truncated checkpoint");
      m(r, c) = static_cast<Scalar>(f);
    }
}

template <typename Scalar>
void read_array_f32(std::istream& is, VectorX<Scalar>& v, const std::string& path) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    float f;
    if (!get_f32_le(is, f)) throw FormatError(path + ": truncated checkpoint");
    v[i] = static_cast<Scalar>(f);
  }
}

}  // namespace detail

/// Checkpoint layout: magic "MILC", u32 version, u32 width count, the
/// widths, f32 dropout rate, f32 batch-norm momentum, then per hidden layer
/// weight/bias/gamma/beta/running mean/running variance and finally the
/// output weight and bias, all float32 little-endian, matrices row-major.
template <typename Scalar>
void save_checkpoint(const Classifier<Scalar>& net,
                     const std::filesystem::path& path) {
  net.check_shapes();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_checkpoint: cannot open " + path.string());
  os.write("MILC", 4);
  detail::put_u32_le(os, kCheckpointVersion);
  detail::put_u32_le(os, static_cast<std::uint32_t>(net.widths.size()));
  for (auto w : net.widths) detail::put_u32_le(os, w);
  detail::put_f32_le(os, static_cast<float>(net.dropout_rate));
  detail::put_f32_le(os, static_cast<float>(net.bn_momentum));
  for (const auto& l : net.hidden) {
    detail::write_array_f32(os, l.weight);
    detail::write_array_f32(os, l.bias);
    detail::write_array_f32(os, l.gamma);
    detail::write_array_f32(os, l.beta);
    detail::write_array_f32(os, l.run_mean);
    detail::write_array_f32(os, l.run_var);
  }
  detail::write_array_f32(os, net.out_weight);
  detail::write_array_f32(os, net.out_bias);
  if (!os) throw IoError("save_checkpoint: short write to " + path.string());
}

/// Inverse of save_checkpoint. When `expected_widths` is non-empty the
/// stored widths must match it exactly.
template <typename Scalar = float>
Classifier<Scalar> load_checkpoint(
    const std::filesystem::path& path,
    const std::vector<std::uint32_t>& expected_widths = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MILC", 4) != 0)
    throw FormatError(path.string() + ": bad magic, not a checkpoint");
  std::uint32_t version = 0;
  if (!detail::get_u32_le(is, version))
    throw FormatError(path.string() + ": truncated checkpoint");
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(version));
  std::uint32_t n_widths = 0;
  if (!detail::get_u32_le(is, n_widths))
    throw FormatError(path.string() + ": truncated checkpoint");
  if (n_widths < 2 || n_widths > 256)
    throw FormatError(path.string() + ": implausible width count " +
                      std::to_string(n_widths));
  std::vector<std::uint32_t> widths(n_widths);
  for (auto& w : widths) {
    if (!detail::get_u32_le(is, w))
      throw FormatError(path.string() + ": truncated checkpoint");
    if (w == 0) throw FormatError(path.string() + ": zero width in header");
  }
  if (widths.back() != 1)
    throw FormatError(path.string() + ": output width must be 1");
  if (!expected_widths.empty() && widths != expected_widths)
    throw FormatError(path.string() + ": checkpoint widths do not match expected shape");

  float dropout = 0.f, momentum = 0.f;
  if (!detail::get_f32_le(is, dropout) || !detail::get_f32_le(is, momentum))
    throw FormatError(path.string() + ": truncated checkpoint");
  if (!(dropout >= 0.f && dropout < 1.f))
    throw FormatError(path.string() + ": dropout rate out of range");
  if (!(momentum >= 0.f && momentum <= 1.f))
    throw FormatError(path.string() + ": batch-norm momentum out of range");

  Classifier<Scalar> net;
  net.widths = widths;
  net.dropout_rate = static_cast<Scalar>(dropout);
  net.bn_momentum = static_cast<Scalar>(momentum);
  net.hidden.resize(widths.size() - 2);
  for (std::size_t k = 0; k < net.hidden.size(); ++k) {
    auto& l = net.hidden[k];
    const auto in = static_cast<Eigen::Index>(widths[k]);
    const auto out = static_cast<Eigen::Index>(widths[k + 1]);
    l.weight.resize(out, in);
    l.bias.resize(out);
    l.gamma.resize(out);
    l.beta.resize(out);
    l.run_mean.resize(out);
    l.run_var.resize(out);
    detail::read_array_f32(is, l.weight, path.string());
    detail::read_array_f32(is, l.bias, path.string());
    detail::read_array_f32(is, l.gamma, path.string());
    detail::read_array_f32(is, l.beta, path.string());
    detail::read_array_f32(is, l.run_mean, path.string());
    detail::read_array_f32(is, l.run_var, path.string());
    if ((l.run_var.array() <= Scalar(0)).any())
      throw FormatError(path.string() + ": non-positive running variance");
  }
  net.out_weight.resize(1, static_cast<Eigen::Index>(widths[widths.size() - 2]));
  net.out_bias.resize(1);
  detail::read_array_f32(is, net.out_weight, path.string());
  detail::read_array_f32(is, net.out_bias, path.string());
  detail::require_no_trailing(is, path.string());

  for (const auto& l : net.hidden) {
    if (!l.weight.allFinite() || !l.bias.allFinite() || !l.gamma.allFinite() ||
        !l.beta.allFinite() || !l.run_mean.allFinite() || !l.run_var.allFinite())
      throw NumericError(path.string() + ": non-finite parameter");
  }
  if (!net.out_weight.allFinite() || !net.out_bias.allFinite())
    throw NumericError(path.string() + ": non-finite parameter");
  return net;
}

}  // namespace stmil
