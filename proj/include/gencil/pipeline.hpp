// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "gencil/data.hpp"
#include "gencil/decoder.hpp"
#include "gencil/tokenizer.hpp"
#include "gencil/vision.hpp"

namespace gencil {

/// Everything the generative classifier needs at CIL time.
struct Pipeline {
  Encoder encoder;
  Decoder decoder;
  Projection projection;
  Vocab vocab;
  std::string question = std::string(kDefaultQuestion);
  std::size_t max_new_tokens = 12;

  TokenSequence question_tokens() const { return vocab.encode(question); }
};

struct PipelineConfig {
  EncoderShape encoder;
  EncoderPretrainConfig encoder_pretrain;
  std::size_t image_tokens = 4;
  std::size_t model_dim = 64;
  std::size_t blocks = 2;
  std::size_t ff_dim = 256;
  DecoderPretrainConfig decoder_pretrain;
  std::string question = std::string(kDefaultQuestion);
  std::size_t max_new_tokens = 12;
  std::uint64_t seed = 1;
};

struct PretrainReport {
  double encoder_accuracy = 0.0;
  std::size_t encoder_steps = 0;
  DecoderPretrainResult decoder;
};

/// Smallest L_max holding both corpora and the longest greedy continuation.
inline std::size_t required_max_len(std::size_t image_tokens, std::size_t question_len,
                                    std::size_t longest_name, std::size_t max_new_tokens) {
  const std::size_t prompt = std::max(question_len, longest_name);
  const std::size_t caption = split_words(kTemplatePrefix).size() + longest_name;
  return 1 + image_tokens + prompt + std::max(caption + 1, max_new_tokens);
}

/// Pretrains the encoder on the disjoint split, then decoder and projection on
/// both corpora. The vocabulary covers benchmark and pretraining names.
inline std::pair<Pipeline, PretrainReport> pretrain_pipeline(const Dataset& pretrain,
                                                             const std::vector<std::string>& benchmark_names,
                                                             const PipelineConfig& cfg) {
  for (const auto& n : pretrain.class_names)
    if (std::find(benchmark_names.begin(), benchmark_names.end(), n) != benchmark_names.end())
      throw std::invalid_argument("pretrain: class \"" + n + "\" is also a benchmark class");
  Pipeline p;
  PretrainReport rep;
  EncoderPretrainConfig ec = cfg.encoder_pretrain;
  ec.seed = cfg.seed;
  auto er = pretrain_encoder(pretrain, cfg.encoder, ec);
  p.encoder = std::move(er.encoder);
  rep.encoder_accuracy = er.train_accuracy;
  rep.encoder_steps = er.steps;

  std::vector<std::string> all = benchmark_names;
  all.insert(all.end(), pretrain.class_names.begin(), pretrain.class_names.end());
  p.vocab = build_vocab(all, {}, cfg.question);
  p.question = cfg.question;
  p.max_new_tokens = cfg.max_new_tokens;

  std::size_t longest = 0;
  for (const auto& n : all) longest = std::max(longest, split_words(normalize_text(n)).size());
  DecoderShape ds;
  ds.vocab_size = p.vocab.size();
  ds.model_dim = cfg.model_dim;
  ds.blocks = cfg.blocks;
  ds.ff_dim = cfg.ff_dim;
  ds.max_len = required_max_len(cfg.image_tokens, p.question_tokens().ids.size(), longest, cfg.max_new_tokens);
  p.decoder = Decoder(ds, cfg.seed);
  p.projection = Projection(p.encoder.feature_dim(), cfg.image_tokens, cfg.model_dim, cfg.seed);

  PretrainCorpus corpus;
  corpus.vocab = &p.vocab;
  corpus.question = p.question_tokens();
  corpus.features = encode_features(pretrain, p.encoder);
  for (auto l : pretrain.labels) corpus.caption_names.push_back(pretrain.class_names[l]);
  corpus.language_names = all;
  DecoderPretrainConfig dc = cfg.decoder_pretrain;
  dc.seed = cfg.seed;
  dc.max_new_tokens = cfg.max_new_tokens;
  rep.decoder = pretrain_decoder(p.decoder, p.projection, corpus, dc);
  p.projection.set_trainable(false);
  return {std::move(p), rep};
}

}  // namespace gencil
