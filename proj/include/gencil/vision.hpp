// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gencil/data.hpp"
#include "gencil/graph.hpp"
#include "gencil/optim.hpp"

namespace gencil {

/// Raised when a frozen parameter set no longer matches its recorded checksum.
class FrozenParameterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncoderShape {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t conv1 = 8;
  std::size_t conv2 = 16;
  std::size_t feature_dim = 64;

  friend bool operator==(const EncoderShape&, const EncoderShape&) = default;
};

namespace detail {

/// im2col ids for a 3x3 same-padded convolution over an (h*w) x c row table.
/// Row p*9+k of the gather is neighbor k of position p, or -1 outside.
inline std::vector<long> conv3x3_ids(std::size_t h, std::size_t w) {
  std::vector<long> ids;
  ids.reserve(h * w * 9);
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long yy = y + dy, xx = x + dx;
          const bool in = yy >= 0 && xx >= 0 && yy < static_cast<long>(h) && xx < static_cast<long>(w);
          ids.push_back(in ? yy * static_cast<long>(w) + xx : -1);
        }
  return ids;
}

/// 2x2 pooling window ids; row q*4+k is the k-th input of output q.
inline std::vector<long> pool2x2_ids(std::size_t h, std::size_t w) {
  std::vector<long> ids;
  ids.reserve(h * w);
  for (std::size_t y = 0; y < h / 2; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      for (std::size_t k = 0; k < 4; ++k)
        ids.push_back(static_cast<long>((2 * y + k / 2) * w + 2 * x + k % 2));
  return ids;
}

/// [0.25 I; 0.25 I; 0.25 I; 0.25 I], turning a reshaped window into its mean.
inline Tensor mean_pool_matrix(std::size_t c) {
  Tensor m({4 * c, c});
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < c; ++i) m.at(k * c + i, i) = 0.25;
  return m;
}

}  // namespace detail

/// Frozen-after-pretraining image encoder: two (3x3 conv, tanh, 2x2 mean
/// pool) stages and one tanh affine layer.
class Encoder {
 public:
  Encoder() = default;

  Encoder(const EncoderShape& shape, std::uint64_t seed) : shape_(shape) {
    if (shape.height % 4 != 0 || shape.width % 4 != 0)
      throw std::invalid_argument("encoder: image sides must be multiples of 4");
    CounterRng rng{seed, 0xe1};
    const std::size_t c = shape.channels, c1 = shape.conv1, c2 = shape.conv2;
    const std::size_t flat = (shape.height / 4) * (shape.width / 4) * c2;
    conv1_w_ = Parameter("encoder.conv1.weight", Tensor::randn({9 * c, c1}, 1.0 / std::sqrt(9.0 * c), rng));
    conv1_b_ = Parameter("encoder.conv1.bias", Tensor({1, c1}));
    conv2_w_ = Parameter("encoder.conv2.weight", Tensor::randn({9 * c1, c2}, 1.0 / std::sqrt(9.0 * c1), rng));
    conv2_b_ = Parameter("encoder.conv2.bias", Tensor({1, c2}));
    fc_w_ = Parameter("encoder.fc.weight", Tensor::randn({flat, shape.feature_dim}, 1.0 / std::sqrt(double(flat)), rng));
    fc_b_ = Parameter("encoder.fc.bias", Tensor({1, shape.feature_dim}));
    build_tables();
  }

  const EncoderShape& shape() const { return shape_; }
  std::size_t feature_dim() const { return shape_.feature_dim; }

  std::vector<Parameter*> parameters() {
    return {&conv1_w_, &conv1_b_, &conv2_w_, &conv2_b_, &fc_w_, &fc_b_};
  }
  std::vector<const Parameter*> parameters() const {
    return {&conv1_w_, &conv1_b_, &conv2_w_, &conv2_b_, &fc_w_, &fc_b_};
  }

  /// Marks every weight non-trainable and records the checksum guard.
  void freeze() {
    for (Parameter* p : parameters()) p->trainable = false;
    frozen_ = true;
    frozen_checksum_ = checksum();
  }
  bool frozen() const { return frozen_; }
  std::uint64_t checksum() const { return gencil::checksum(parameters()); }
  std::uint64_t frozen_checksum() const { return frozen_checksum_; }

  void verify_frozen() const {
    if (!frozen_) throw FrozenParameterError("encoder: not finalized (call freeze first)");
    if (checksum() != frozen_checksum_)
      throw FrozenParameterError("encoder: weights changed after freeze (checksum mismatch)");
  }

  /// Restores a frozen encoder from stored tensors; the checksum guard is
  /// re-established from the loaded values.
  void load_frozen(const EncoderShape& shape, std::vector<Tensor> tensors) {
    *this = Encoder(shape, 0);
    auto ps = parameters();
    if (tensors.size() != ps.size()) throw std::invalid_argument("encoder: wrong tensor count");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (tensors[i].shape() != ps[i]->value.shape())
        throw std::invalid_argument("encoder: shape mismatch for " + ps[i]->name);
      ps[i]->value = std::move(tensors[i]);
    }
    freeze();
  }

  std::size_t input_size() const { return shape_.height * shape_.width * shape_.channels; }

  static Tensor pixels_to_tensor(std::span<const std::uint8_t> px, std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < px.size(); ++i) t[i] = (static_cast<double>(px[i]) - 128.0) / 64.0;
    return t;
  }

  /// Graph forward for one image; returns a 1 x feature_dim row.
  Var forward(Graph& g, std::span<const std::uint8_t> pixels) {
    if (pixels.size() != input_size())
      throw std::invalid_argument("encoder: image has " + std::to_string(pixels.size()) +
                                  " values, expected " + std::to_string(input_size()));
    const std::size_t h = shape_.height, w = shape_.width;
    Var x = g.constant(pixels_to_tensor(pixels, h * w, shape_.channels));
    x = conv_stage(g, x, h, w, shape_.channels, conv1_w_, conv1_b_, ids_conv1_, ids_pool1_, pool1_);
    x = conv_stage(g, x, h / 2, w / 2, shape_.conv1, conv2_w_, conv2_b_, ids_conv2_, ids_pool2_, pool2_);
    Var flat = g.reshape(x, 1, g.value(x).size());
    return g.tanh(g.add_row(g.matmul(flat, g.param(fc_w_)), g.param(fc_b_)));
  }

 private:
  Var conv_stage(Graph& g, Var x, std::size_t h, std::size_t w, std::size_t cin, Parameter& wgt,
                 Parameter& bias, const std::vector<long>& conv_ids, const std::vector<long>& pool_ids,
                 const Tensor& pool) {
    const std::size_t cout = wgt.value.cols();
    Var cols = g.reshape(g.gather_rows(x, conv_ids), h * w, 9 * cin);
    Var act = g.tanh(g.add_row(g.matmul(cols, g.param(wgt)), g.param(bias)));
    Var win = g.reshape(g.gather_rows(act, pool_ids), (h / 2) * (w / 2), 4 * cout);
    return g.matmul(win, g.constant(pool));
  }

  void build_tables() {
    const std::size_t h = shape_.height, w = shape_.width;
    ids_conv1_ = detail::conv3x3_ids(h, w);
    ids_pool1_ = detail::pool2x2_ids(h, w);
    ids_conv2_ = detail::conv3x3_ids(h / 2, w / 2);
    ids_pool2_ = detail::pool2x2_ids(h / 2, w / 2);
    pool1_ = detail::mean_pool_matrix(shape_.conv1);
    pool2_ = detail::mean_pool_matrix(shape_.conv2);
  }

  EncoderShape shape_;
  Parameter conv1_w_, conv1_b_, conv2_w_, conv2_b_, fc_w_, fc_b_;
  std::vector<long> ids_conv1_, ids_pool1_, ids_conv2_, ids_pool2_;
  Tensor pool1_, pool2_;
  bool frozen_ = false;
  std::uint64_t frozen_checksum_ = 0;
};

/// Feature of one image from a frozen encoder. Pure: no gradient, no state.
inline std::vector<double> encode_image(std::span<const std::uint8_t> pixels, Encoder& enc) {
  enc.verify_frozen();
  Graph g(GradMode::kInference);
  const Tensor& f = g.value(enc.forward(g, pixels));
  return {f.values().begin(), f.values().end()};
}

/// Features of every image of a dataset, one row per example.
inline Tensor encode_features(const Dataset& d, Encoder& enc) {
  enc.verify_frozen();
  if (d.height != enc.shape().height || d.width != enc.shape().width || d.channels != enc.shape().channels)
    throw std::invalid_argument("encoder: dataset image shape does not match encoder input");
  if (d.size() == 0) throw std::invalid_argument("encoder: empty dataset");
  Tensor out({d.size(), enc.feature_dim()});
  for (std::size_t i = 0; i < d.size(); ++i) {
    Graph g(GradMode::kInference);
    const Tensor& f = g.value(enc.forward(g, d.image(i)));
    std::copy(f.values().begin(), f.values().end(), out.data() + i * enc.feature_dim());
  }
  enc.verify_frozen();
  return out;
}

/// Affine map from encoder features to `tokens` decoder-space rows.
class Projection {
 public:
  Projection() = default;
  Projection(std::size_t feature_dim, std::size_t tokens, std::size_t model_dim, std::uint64_t seed)
      : tokens_(tokens), model_dim_(model_dim) {
    if (tokens == 0 || model_dim == 0 || feature_dim == 0)
      throw std::invalid_argument("projection: dimensions must be positive");
    CounterRng rng{seed, 0x970};
    weight_ = Parameter("projection.weight",
                        Tensor::randn({feature_dim, tokens * model_dim}, 1.0 / std::sqrt(double(feature_dim)), rng));
    bias_ = Parameter("projection.bias", Tensor({1, tokens * model_dim}));
  }

  std::size_t tokens() const { return tokens_; }
  std::size_t model_dim() const { return model_dim_; }
  std::size_t feature_dim() const { return weight_.value.rows(); }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }
  std::vector<const Parameter*> parameters() const { return {&weight_, &bias_}; }
  void set_trainable(bool t) {
    weight_.trainable = t;
    bias_.trainable = t;
  }

  /// feature: 1 x feature_dim. Returns tokens x model_dim.
  Var forward(Graph& g, Var feature) {
    if (g.value(feature).size() != feature_dim())
      throw std::invalid_argument("projection: feature has " + std::to_string(g.value(feature).size()) +
                                  " values, expected " + std::to_string(feature_dim()));
    Var f = g.reshape(feature, 1, feature_dim());
    return g.reshape(g.add_row(g.matmul(f, g.param(weight_)), g.param(bias_)), tokens_, model_dim_);
  }

 private:
  std::size_t tokens_ = 0;
  std::size_t model_dim_ = 0;
  Parameter weight_, bias_;
};

inline Tensor project(std::span<const double> feature, Projection& proj) {
  Graph g(GradMode::kInference);
  Var f = g.constant(Tensor({1, feature.size()}, std::vector<double>(feature.begin(), feature.end())));
  return g.value(proj.forward(g, f));
}

struct EncoderPretrainConfig {
  std::size_t max_steps = 400;
  std::size_t batch_size = 16;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double lr = 0.05;
  double lr_min = 0.0;
  double accuracy_gate = 0.90;
  std::size_t eval_every = 25;
  std::uint64_t seed = 1;
};

struct EncoderPretrainResult {
  Encoder encoder;
  double train_accuracy = 0.0;
  std::size_t steps = 0;
};

class GateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double head_accuracy(Encoder& enc, Parameter& hw, Parameter& hb, const Dataset& d) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    Graph g(GradMode::kInference);
    const Tensor& logits = g.value(g.add_row(g.matmul(enc.forward(g, d.image(i)), g.param(hw)), g.param(hb)));
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[best]) best = c;
    correct += best == d.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

}  // namespace detail

/// Trains the encoder with a temporary linear head until the train accuracy
/// gate is met, discards the head and freezes the weights.
inline EncoderPretrainResult pretrain_encoder(const Dataset& data, const EncoderShape& shape,
                                              const EncoderPretrainConfig& cfg) {
  if (data.size() == 0 || data.class_names.empty())
    throw std::invalid_argument("pretrain_encoder: empty pretraining split");
  if (cfg.max_steps == 0) throw GateError("pretrain budget exhausted: zero encoder training steps");
  EncoderPretrainResult res{Encoder(shape, cfg.seed)};
  Encoder& enc = res.encoder;
  const std::size_t k = data.class_names.size();
  CounterRng init{cfg.seed, 0x4ead};
  Parameter hw("head.weight", Tensor::randn({shape.feature_dim, k}, 1.0 / std::sqrt(double(shape.feature_dim)), init));
  Parameter hb("head.bias", Tensor({1, k}));
  std::vector<Parameter*> params = enc.parameters();
  params.push_back(&hw);
  params.push_back(&hb);
  Optimizer opt(cfg.optimizer, OptimizerState(cfg.lr, cfg.lr_min, static_cast<std::int64_t>(cfg.max_steps)));
  CounterRng rng{cfg.seed, 0xba7c};
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  bool passed = false;
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    Graph g;
    g.set_step(static_cast<std::int64_t>(step));
    std::vector<Var> rows;
    std::vector<long> targets;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        shuffle_in_place(order, rng);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      rows.push_back(enc.forward(g, data.image(i)));
      targets.push_back(static_cast<long>(data.labels[i]));
    }
    Var logits = g.add_row(g.matmul(g.concat_rows(rows), g.param(hw)), g.param(hb));
    Var loss = g.cross_entropy(logits, targets, std::vector<double>(targets.size(), 1.0 / double(targets.size())));
    g.backward(loss);
    opt.step(params);
    res.steps = step + 1;
    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.max_steps) {
      res.train_accuracy = detail::head_accuracy(enc, hw, hb, data);
      if (res.train_accuracy >= cfg.accuracy_gate) {
        passed = true;
        break;
      }
    }
  }
  if (!passed)
    throw GateError("pretrain budget exhausted: encoder train accuracy " + std::to_string(res.train_accuracy) +
                    " below gate " + std::to_string(cfg.accuracy_gate));
  enc.freeze();
  return res;
}

}  // namespace gencil
