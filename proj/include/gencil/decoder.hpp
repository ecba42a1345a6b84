// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gencil/graph.hpp"
#include "gencil/optim.hpp"
#include "gencil/tokenizer.hpp"
#include "gencil/vision.hpp"

namespace gencil {

struct DecoderShape {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 64;
  std::size_t blocks = 2;
  std::size_t ff_dim = 256;
  std::size_t max_len = 32;

  friend bool operator==(const DecoderShape&, const DecoderShape&) = default;
};

/// Token layout of one decoder input:
///   [bos] [image x P] [question ...] [answer ... eos]
/// `ids` carries kImg at image positions. The answer span covers the answer
/// tokens and the closing eos.
struct AssembledInput {
  std::vector<TokenId> ids;
  std::size_t image_tokens = 0;
  std::size_t question_length = 0;
  std::optional<Span> answer;

  std::size_t rows() const { return ids.size(); }
};

inline AssembledInput assemble_input(std::size_t image_tokens, const TokenSequence& question,
                                     const TokenSequence* answer = nullptr) {
  AssembledInput in;
  in.image_tokens = image_tokens;
  in.question_length = question.ids.size();
  in.ids.push_back(Vocab::kBos);
  in.ids.insert(in.ids.end(), image_tokens, Vocab::kImg);
  in.ids.insert(in.ids.end(), question.ids.begin(), question.ids.end());
  if (answer != nullptr) {
    const std::size_t start = in.ids.size();
    in.ids.insert(in.ids.end(), answer->ids.begin(), answer->ids.end());
    in.ids.push_back(Vocab::kEos);
    in.answer = Span{start, answer->ids.size() + 1};
  }
  return in;
}

struct AnswerTargets {
  std::vector<long> targets;
  std::vector<double> weights;
};

/// Per-row targets and weights for the answer-span loss. Rows outside the
/// span get weight 0 and target 0.
inline AnswerTargets answer_targets(const AssembledInput& in, double scale = 1.0) {
  if (!in.answer || in.answer->length == 0) throw NumericsError("answer_loss: empty answer span");
  AnswerTargets t{std::vector<long>(in.rows(), 0), std::vector<double>(in.rows(), 0.0)};
  const double w = scale / double(in.answer->length);
  for (std::size_t r = in.answer->start; r < in.answer->start + in.answer->length; ++r) {
    t.targets[r - 1] = in.ids[r];
    t.weights[r - 1] = w;
  }
  return t;
}

/// Pre-LN causal transformer decoder with tied input/output embeddings and a
/// learned placeholder row used when no image is present.
class Decoder {
 public:
  struct Block {
    Parameter ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  Decoder() = default;

  Decoder(const DecoderShape& shape, std::uint64_t seed) : shape_(shape) {
    if (shape.vocab_size <= Vocab::kSpecialCount) throw std::invalid_argument("decoder: vocabulary too small");
    if (shape.model_dim == 0 || shape.blocks == 0 || shape.ff_dim == 0 || shape.max_len < 2)
      throw std::invalid_argument("decoder: dimensions must be positive");
    CounterRng rng{seed, 0xdec};
    const std::size_t d = shape.model_dim, f = shape.ff_dim;
    const double sd_in = 1.0 / std::sqrt(double(d));
    const double out_scale = 1.0 / std::sqrt(2.0 * double(shape.blocks));
    tok_emb_ = Parameter("decoder.tok_emb", Tensor::randn({shape.vocab_size, d}, 0.05, rng));
    pos_emb_ = Parameter("decoder.pos_emb", Tensor::randn({shape.max_len, d}, 0.05, rng));
    null_emb_ = Parameter("decoder.null_emb", Tensor::randn({1, d}, 0.05, rng));
    for (std::size_t b = 0; b < shape.blocks; ++b) {
      const std::string p = "decoder.block" + std::to_string(b) + ".";
      blocks_.push_back(Block{
          Parameter(p + "ln1.gain", Tensor({1, d}, 1.0)),
          Parameter(p + "ln1.bias", Tensor({1, d})),
          Parameter(p + "attn.wq", Tensor::randn({d, d}, sd_in, rng)),
          Parameter(p + "attn.wk", Tensor::randn({d, d}, sd_in, rng)),
          Parameter(p + "attn.wv", Tensor::randn({d, d}, sd_in, rng)),
          Parameter(p + "attn.wo", Tensor::randn({d, d}, sd_in * out_scale, rng)),
          Parameter(p + "ln2.gain", Tensor({1, d}, 1.0)),
          Parameter(p + "ln2.bias", Tensor({1, d})),
          Parameter(p + "ff.w1", Tensor::randn({d, f}, sd_in, rng)),
          Parameter(p + "ff.b1", Tensor({1, f})),
          Parameter(p + "ff.w2", Tensor::randn({f, d}, out_scale / std::sqrt(double(f)), rng)),
          Parameter(p + "ff.b2", Tensor({1, d})),
      });
    }
    lnf_g_ = Parameter("decoder.lnf.gain", Tensor({1, d}, 1.0));
    lnf_b_ = Parameter("decoder.lnf.bias", Tensor({1, d}));
  }

  const DecoderShape& shape() const { return shape_; }
  std::size_t model_dim() const { return shape_.model_dim; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps{&tok_emb_, &pos_emb_, &null_emb_};
    for (auto& b : blocks_)
      for (Parameter* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.w1,
                           &b.b1, &b.w2, &b.b2})
        ps.push_back(p);
    ps.push_back(&lnf_g_);
    ps.push_back(&lnf_b_);
    return ps;
  }
  std::vector<const Parameter*> parameters() const {
    auto ps = const_cast<Decoder*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  void set_trainable(bool t) {
    for (Parameter* p : parameters()) p->trainable = t;
  }

  void freeze() {
    set_trainable(false);
    frozen_ = true;
    frozen_checksum_ = checksum();
  }
  /// Lifts the freeze for joint fine-tuning; the checksum guard is dropped.
  void unfreeze() {
    frozen_ = false;
    set_trainable(true);
  }
  bool frozen() const { return frozen_; }
  std::uint64_t checksum() const { return gencil::checksum(parameters()); }
  std::uint64_t frozen_checksum() const { return frozen_checksum_; }
  void verify_frozen() const {
    if (frozen_ && checksum() != frozen_checksum_)
      throw FrozenParameterError("decoder: weights changed after freeze (checksum mismatch)");
  }

  /// Replaces every tensor in parameters() order and freezes.
  void load_frozen(const DecoderShape& shape, std::vector<Tensor> tensors) {
    *this = Decoder(shape, 0);
    auto ps = parameters();
    if (tensors.size() != ps.size()) throw std::invalid_argument("decoder: wrong tensor count");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (tensors[i].shape() != ps[i]->value.shape())
        throw std::invalid_argument("decoder: shape mismatch for " + ps[i]->name);
      ps[i]->value = std::move(tensors[i]);
    }
    freeze();
  }

  /// P copies of the learned placeholder row.
  Var null_image(Graph& g, std::size_t tokens) {
    return g.gather_rows(g.param(null_emb_), std::vector<long>(tokens, 0));
  }

  /// Input embeddings: token rows with image_tokens spliced in, plus positions.
  Var embed(Graph& g, Var image_tokens, const AssembledInput& in) {
    const Tensor& img = g.value(image_tokens);
    if (img.rows() != in.image_tokens || img.cols() != shape_.model_dim)
      throw std::invalid_argument("decoder: image tokens have shape " + shape_string(img.shape()) +
                                  ", expected " + std::to_string(in.image_tokens) + "x" +
                                  std::to_string(shape_.model_dim));
    return embed_impl(g, &image_tokens, in);
  }

  /// Text-only input (no image positions).
  Var embed(Graph& g, const AssembledInput& in) {
    if (in.image_tokens != 0) throw std::invalid_argument("decoder: input expects image tokens");
    return embed_impl(g, nullptr, in);
  }

  /// rows x vocab next-token logits; row r scores token r + 1.
  Var logits(Graph& g, Var x) {
    const double scale = 1.0 / std::sqrt(double(shape_.model_dim));
    for (auto& b : blocks_) {
      Var h = g.layer_norm(x, g.param(b.ln1_g), g.param(b.ln1_b));
      Var q = g.matmul(h, g.param(b.wq));
      Var k = g.matmul(h, g.param(b.wk));
      Var v = g.matmul(h, g.param(b.wv));
      Var att = g.softmax(g.matmul(q, k, {.transpose_b = true, .alpha = scale}), true);
      x = g.add(x, g.matmul(g.matmul(att, v), g.param(b.wo)));
      Var h2 = g.layer_norm(x, g.param(b.ln2_g), g.param(b.ln2_b));
      Var f = g.gelu(g.add_row(g.matmul(h2, g.param(b.w1)), g.param(b.b1)));
      x = g.add(x, g.add_row(g.matmul(f, g.param(b.w2)), g.param(b.b2)));
    }
    Var hf = g.layer_norm(x, g.param(lnf_g_), g.param(lnf_b_));
    return g.matmul(hf, g.param(tok_emb_), {.transpose_b = true});
  }

  /// Mean answer-token cross-entropy times `scale`. Only the answer span is
  /// scored: row r - 1 predicts token r for every r in the span.
  Var answer_loss(Graph& g, Var image_tokens, const AssembledInput& in, double scale = 1.0) {
    auto [targets, weights] = answer_targets(in, scale);
    Var L = logits(g, embed(g, image_tokens, in));
    return g.cross_entropy(L, std::move(targets), std::move(weights));
  }

 private:
  Var embed_impl(Graph& g, const Var* image_tokens, const AssembledInput& in) {
    if (in.rows() > shape_.max_len)
      throw std::invalid_argument("decoder: sequence of " + std::to_string(in.rows()) +
                                  " rows exceeds max_len " + std::to_string(shape_.max_len));
    for (TokenId id : in.ids)
      if (id < 0 || static_cast<std::size_t>(id) >= shape_.vocab_size)
        throw std::invalid_argument("decoder: token id " + std::to_string(id) + " outside vocabulary");
    Var tok = g.param(tok_emb_);
    std::vector<Var> parts{g.gather_rows(tok, {long(Vocab::kBos)})};
    if (image_tokens != nullptr) parts.push_back(*image_tokens);
    if (in.rows() > 1 + in.image_tokens) {
      std::vector<long> rest(in.ids.begin() + 1 + long(in.image_tokens), in.ids.end());
      parts.push_back(g.gather_rows(tok, std::move(rest)));
    }
    std::vector<long> pos(in.rows());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = long(i);
    Var x = parts.size() == 1 ? parts[0] : g.concat_rows(parts);
    return g.add(x, g.gather_rows(g.param(pos_emb_), std::move(pos)));
  }

  DecoderShape shape_;
  Parameter tok_emb_, pos_emb_, null_emb_;
  std::vector<Block> blocks_;
  Parameter lnf_g_, lnf_b_;
  bool frozen_ = false;
  std::uint64_t frozen_checksum_ = 0;
};

/// Greedy decoding from a fixed prefix. Stops at eos or after max_new tokens;
/// argmax ties go to the lowest token id. The eos is not returned.
inline std::vector<TokenId> greedy_decode(Decoder& dec, const Tensor& image_tokens,
                                          const TokenSequence& question, std::size_t max_new) {
  AssembledInput in = assemble_input(image_tokens.rows(), question);
  std::vector<TokenId> out;
  for (std::size_t step = 0; step < max_new && in.rows() < dec.shape().max_len; ++step) {
    Graph g(GradMode::kInference);
    const Tensor& L = g.value(dec.logits(g, dec.embed(g, g.constant(image_tokens), in)));
    const std::size_t v = L.cols(), last = L.rows() - 1;
    std::size_t best = 0;
    for (std::size_t c = 1; c < v; ++c)
      if (L.at(last, c) > L.at(last, best)) best = c;
    if (TokenId(best) == Vocab::kEos) break;
    out.push_back(TokenId(best));
    in.ids.push_back(TokenId(best));
  }
  return out;
}

inline std::string generate_text(Decoder& dec, const Vocab& vocab, const Tensor& image_tokens,
                                 const TokenSequence& question, std::size_t max_new) {
  return vocab.decode(greedy_decode(dec, image_tokens, question, max_new));
}

/// Image tokens for a feature row under a projection, outside any training graph.
inline Tensor image_tokens_for(Projection& proj, std::span<const double> feature) {
  return project(feature, proj);
}

inline Tensor null_image_tokens(Decoder& dec, std::size_t tokens) {
  Graph g(GradMode::kInference);
  return g.value(dec.null_image(g, tokens));
}

struct DecoderPretrainConfig {
  std::size_t steps = 1500;
  std::size_t batch_size = 16;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 3e-3;
  double lr_min = 0.0;
  double gate = 0.5;
  std::size_t max_new_tokens = 12;
  bool caption_corpus = true;
  bool language_corpus = true;
  std::uint64_t seed = 1;
};

struct DecoderPretrainResult {
  double caption_loss = 0.0;
  double language_loss = 0.0;
  double language_decode_accuracy = 0.0;
  std::size_t steps = 0;
};

/// Inputs for decoder pretraining. Caption items pair a pretraining image
/// feature with its class name; language items are class names alone.
struct PretrainCorpus {
  const Vocab* vocab = nullptr;
  TokenSequence question;
  Tensor features;  // N x feature_dim
  std::vector<std::string> caption_names;  // one per feature row
  std::vector<std::string> language_names;
};

namespace detail {

struct CorpusItem {
  long feature_row;  // -1 for language items
  AssembledInput input;
};

inline Var item_image(Graph& g, Decoder& dec, Projection& proj, const Tensor& features, const CorpusItem& it) {
  if (it.feature_row < 0) return dec.null_image(g, proj.tokens());
  const std::size_t d = features.cols();
  Tensor row({1, d}, std::vector<double>(features.data() + it.feature_row * d,
                                         features.data() + (it.feature_row + 1) * d));
  return proj.forward(g, g.constant(std::move(row)));
}

inline double mean_item_loss(Decoder& dec, Projection& proj, const Tensor& features,
                             const std::vector<CorpusItem>& items) {
  if (items.empty()) return 0.0;
  double total = 0.0;
  for (const auto& it : items) {
    Graph g(GradMode::kInference);
    total += g.value(dec.answer_loss(g, item_image(g, dec, proj, features, it), it.input)).item();
  }
  return total / double(items.size());
}

}  // namespace detail

/// Joint pretraining of decoder and projection on the caption corpus and the
/// text-prompted language corpus, followed by the caption-loss gate. The
/// decoder is frozen on success.
inline DecoderPretrainResult pretrain_decoder(Decoder& dec, Projection& proj, const PretrainCorpus& corpus,
                                              const DecoderPretrainConfig& cfg) {
  if (corpus.vocab == nullptr) throw std::invalid_argument("pretrain_decoder: no vocabulary");
  if (!cfg.caption_corpus && !cfg.language_corpus)
    throw std::invalid_argument("pretrain_decoder: both corpora disabled");
  if (cfg.steps == 0) throw GateError("pretrain budget exhausted: zero decoder training steps");
  if (corpus.features.rows() != corpus.caption_names.size())
    throw std::invalid_argument("pretrain_decoder: one caption name per feature row required");
  const Vocab& vocab = *corpus.vocab;
  std::vector<detail::CorpusItem> captions, language;
  for (std::size_t i = 0; i < corpus.caption_names.size(); ++i) {
    TokenSequence ans = vocab.encode(render_template(corpus.caption_names[i]));
    captions.push_back({long(i), assemble_input(proj.tokens(), corpus.question, &ans)});
  }
  for (const auto& name : corpus.language_names) {
    TokenSequence ans = vocab.encode(render_template(name));
    language.push_back({-1, assemble_input(proj.tokens(), vocab.encode(name), &ans)});
  }
  if (cfg.caption_corpus && captions.empty()) throw std::invalid_argument("pretrain_decoder: empty caption corpus");
  if (cfg.language_corpus && language.empty()) throw std::invalid_argument("pretrain_decoder: empty language corpus");

  dec.set_trainable(true);
  proj.set_trainable(true);
  std::vector<Parameter*> params = dec.parameters();
  for (Parameter* p : proj.parameters()) params.push_back(p);
  Optimizer opt(cfg.optimizer, OptimizerState(cfg.lr, cfg.lr_min, std::int64_t(cfg.steps)));
  CounterRng rng{cfg.seed, 0xdeca};
  std::vector<std::size_t> cap_order(captions.size()), lang_order(language.size());
  for (std::size_t i = 0; i < cap_order.size(); ++i) cap_order[i] = i;
  for (std::size_t i = 0; i < lang_order.size(); ++i) lang_order[i] = i;
  std::size_t cap_cursor = cap_order.size(), lang_cursor = lang_order.size();
  auto draw = [&](std::vector<std::size_t>& order, std::size_t& cursor) {
    if (cursor == order.size()) {
      shuffle_in_place(order, rng);
      cursor = 0;
    }
    return order[cursor++];
  };

  DecoderPretrainResult res;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Graph g;
    g.set_step(std::int64_t(step));
    std::vector<const detail::CorpusItem*> batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const bool use_caption = cfg.caption_corpus && (!cfg.language_corpus || b % 2 == 0);
      batch.push_back(use_caption ? &captions[draw(cap_order, cap_cursor)]
                                  : &language[draw(lang_order, lang_cursor)]);
    }
    const double scale = 1.0 / double(batch.size());
    Var loss = dec.answer_loss(g, detail::item_image(g, dec, proj, corpus.features, *batch[0]), batch[0]->input, scale);
    for (std::size_t b = 1; b < batch.size(); ++b)
      loss = g.add(loss, dec.answer_loss(g, detail::item_image(g, dec, proj, corpus.features, *batch[b]),
                                         batch[b]->input, scale));
    g.backward(loss);
    opt.step(params);
    res.steps = step + 1;
  }

  res.caption_loss = detail::mean_item_loss(dec, proj, corpus.features, captions);
  res.language_loss = detail::mean_item_loss(dec, proj, corpus.features, language);
  std::size_t decoded = 0;
  const Tensor null_rows = null_image_tokens(dec, proj.tokens());
  for (const auto& name : corpus.language_names) {
    const std::string text = generate_text(dec, vocab, null_rows, vocab.encode(name), cfg.max_new_tokens);
    decoded += normalize_text(extract_class(text)) == normalize_text(name);
  }
  res.language_decode_accuracy =
      corpus.language_names.empty() ? 0.0 : double(decoded) / double(corpus.language_names.size());
  if (cfg.caption_corpus && res.caption_loss > cfg.gate)
    throw GateError("pretrain budget exhausted: caption loss " + std::to_string(res.caption_loss) +
                    " above gate " + std::to_string(cfg.gate));
  dec.freeze();
  return res;
}

}  // namespace gencil
