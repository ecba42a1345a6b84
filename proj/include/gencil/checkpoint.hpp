// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gencil/data.hpp"
#include "gencil/hash.hpp"
#include "gencil/pipeline.hpp"

namespace gencil {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 4> kCheckpointMagic{'G', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// GCKP container, little-endian:
///   magic "GCKP" | version u32 | section count u32 |
///   per section: name length u16 | name | payload length u64 | FNV-1a 64 of payload u64 | payload
/// The "meta" section is JSON; each "tensor:<name>" section is rows u32 | cols u32 | f64 values.
struct CheckpointSection {
  std::string name;
  std::vector<std::uint8_t> payload;
};

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64(std::span<const std::uint8_t> b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[std::size_t(i)]) << (8 * i);
  return v;
}

inline std::vector<std::uint8_t> tensor_payload(const Tensor& t) {
  if (t.shape().size() != 2) throw std::invalid_argument("checkpoint: only matrices are stored");
  std::vector<std::uint8_t> out;
  put_u32(out, std::uint32_t(t.rows()));
  put_u32(out, std::uint32_t(t.cols()));
  for (std::size_t i = 0; i < t.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(t[i]));
  return out;
}

inline Tensor tensor_from_payload(const std::string& name, std::span<const std::uint8_t> p) {
  if (p.size() < 8) throw CheckpointError("checkpoint: section " + name + " too short");
  ByteReader r(p);
  const std::size_t rows = r.u32("rows"), cols = r.u32("cols");
  if (r.remaining() != rows * cols * 8)
    throw CheckpointError("checkpoint: section " + name + " holds " + std::to_string(r.remaining()) +
                          " value bytes, expected " + std::to_string(rows * cols * 8));
  std::vector<double> v(rows * cols);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::bit_cast<double>(get_u64(r.take(8, "value")));
  return Tensor({rows, cols}, std::move(v));
}

inline std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointSection>& sections) {
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, std::uint32_t(sections.size()));
  for (const auto& s : sections) {
    if (s.name.empty() || s.name.size() > 0xffff) throw std::invalid_argument("checkpoint: bad section name");
    detail::put_u16(out, std::uint16_t(s.name.size()));
    out.insert(out.end(), s.name.begin(), s.name.end());
    detail::put_u64(out, s.payload.size());
    detail::put_u64(out, fnv1a64(s.payload));
    out.insert(out.end(), s.payload.begin(), s.payload.end());
  }
  return out;
}

/// Parses and verifies every section checksum.
inline std::vector<CheckpointSection> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  auto fail = [](const std::string& m) { throw CheckpointError("checkpoint: " + m); };
  if (bytes.size() < 12) fail("truncated header");
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) fail("bad magic");
  std::vector<CheckpointSection> out;
  try {
    detail::ByteReader r(bytes.subspan(4));
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
      fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(kCheckpointVersion) + ")");
    const std::uint32_t n = r.u32("section count");
    for (std::uint32_t i = 0; i < n; ++i) {
      CheckpointSection s;
      const std::uint16_t len = r.u16("section name length");
      auto nm = r.take(len, "section name");
      s.name.assign(nm.begin(), nm.end());
      const std::uint64_t size = detail::get_u64(r.take(8, "payload length"));
      const std::uint64_t sum = detail::get_u64(r.take(8, "payload checksum"));
      if (size > r.remaining()) fail("truncated section " + s.name);
      auto body = r.take(std::size_t(size), "payload");
      if (fnv1a64(body) != sum) fail("checksum mismatch in section " + s.name);
      s.payload.assign(body.begin(), body.end());
      out.push_back(std::move(s));
    }
    if (r.remaining() != 0) fail("trailing bytes after last section");
  } catch (const DatasetError& e) {
    fail(std::string(e.what()).substr(std::string("dataset: ").size()));
  }
  return out;
}

/// Pretrained pipeline plus the facts a run needs to reproduce and audit it.
struct CheckpointData {
  Pipeline pipeline;
  PretrainReport report;
  std::vector<std::string> benchmark_classes;
  std::vector<std::string> pretrain_classes;
};

inline std::vector<std::uint8_t> pipeline_to_checkpoint(const CheckpointData& c) {
  const Pipeline& p = c.pipeline;
  const auto& es = p.encoder.shape();
  const auto& ds = p.decoder.shape();
  nlohmann::json meta = {
      {"encoder", {{"height", es.height}, {"width", es.width}, {"channels", es.channels}, {"conv1", es.conv1},
                   {"conv2", es.conv2}, {"feature_dim", es.feature_dim}}},
      {"decoder", {{"vocab_size", ds.vocab_size}, {"model_dim", ds.model_dim}, {"blocks", ds.blocks},
                   {"ff_dim", ds.ff_dim}, {"max_len", ds.max_len}}},
      {"image_tokens", p.projection.tokens()},
      {"question", p.question},
      {"max_new_tokens", p.max_new_tokens},
      {"vocabulary", p.vocab.words()},
      {"benchmark_classes", c.benchmark_classes},
      {"pretrain_classes", c.pretrain_classes},
      {"encoder_checksum", p.encoder.checksum()},
      {"decoder_checksum", p.decoder.checksum()},
      {"pretrain",
       {{"encoder_accuracy", c.report.encoder_accuracy}, {"encoder_steps", c.report.encoder_steps},
        {"caption_loss", c.report.decoder.caption_loss}, {"language_loss", c.report.decoder.language_loss},
        {"language_decode_accuracy", c.report.decoder.language_decode_accuracy},
        {"decoder_steps", c.report.decoder.steps}}}};
  std::vector<CheckpointSection> sections{{"meta", detail::bytes_of(meta.dump(1))}};
  auto add = [&](const Parameter* x) { sections.push_back({"tensor:" + x->name, detail::tensor_payload(x->value)}); };
  for (const Parameter* x : p.encoder.parameters()) add(x);
  for (const Parameter* x : p.decoder.parameters()) add(x);
  for (const Parameter* x : std::as_const(p.projection).parameters()) add(x);
  return encode_checkpoint(sections);
}

inline CheckpointData checkpoint_to_pipeline(std::span<const std::uint8_t> bytes) {
  auto sections = decode_checkpoint(bytes);
  if (sections.empty() || sections[0].name != "meta") throw CheckpointError("checkpoint: missing meta section");
  std::map<std::string, Tensor> tensors;
  for (std::size_t i = 1; i < sections.size(); ++i) {
    const auto& s = sections[i];
    if (!s.name.starts_with("tensor:")) throw CheckpointError("checkpoint: unknown section " + s.name);
    tensors.emplace(s.name.substr(7), detail::tensor_from_payload(s.name, s.payload));
  }
  CheckpointData out;
  try {
    const auto meta = nlohmann::json::parse(sections[0].payload.begin(), sections[0].payload.end());
    EncoderShape es;
    const auto& e = meta.at("encoder");
    es.height = e.at("height");
    es.width = e.at("width");
    es.channels = e.at("channels");
    es.conv1 = e.at("conv1");
    es.conv2 = e.at("conv2");
    es.feature_dim = e.at("feature_dim");
    DecoderShape ds;
    const auto& d = meta.at("decoder");
    ds.vocab_size = d.at("vocab_size");
    ds.model_dim = d.at("model_dim");
    ds.blocks = d.at("blocks");
    ds.ff_dim = d.at("ff_dim");
    ds.max_len = d.at("max_len");

    auto take = [&](const std::vector<const Parameter*>& like) {
      std::vector<Tensor> ts;
      for (const Parameter* x : like) {
        auto it = tensors.find(x->name);
        if (it == tensors.end()) throw CheckpointError("checkpoint: missing tensor " + x->name);
        ts.push_back(std::move(it->second));
        tensors.erase(it);
      }
      return ts;
    };
    Pipeline& p = out.pipeline;
    const Encoder enc_like(es, 0);
    const Decoder dec_like(ds, 0);
    p.encoder.load_frozen(es, take(enc_like.parameters()));
    p.decoder.load_frozen(ds, take(dec_like.parameters()));
    p.projection = Projection(es.feature_dim, meta.at("image_tokens"), ds.model_dim, 0);
    auto pt = take(std::as_const(p.projection).parameters());
    if (pt[0].shape() != p.projection.weight().value.shape() || pt[1].shape() != p.projection.bias().value.shape())
      throw CheckpointError("checkpoint: projection shape mismatch");
    p.projection.weight().value = std::move(pt[0]);
    p.projection.bias().value = std::move(pt[1]);
    p.projection.set_trainable(false);
    if (!tensors.empty()) throw CheckpointError("checkpoint: unexpected tensor " + tensors.begin()->first);

    std::vector<std::string> words = meta.at("vocabulary");
    if (words.size() < Vocab::kSpecialCount ||
        !std::equal(Vocab::special_names().begin(), Vocab::special_names().end(), words.begin()))
      throw CheckpointError("checkpoint: vocabulary lacks the special tokens");
    p.vocab = Vocab(std::vector<std::string>(words.begin() + long(Vocab::kSpecialCount), words.end()));
    if (p.vocab.words() != words) throw CheckpointError("checkpoint: vocabulary is not in canonical order");
    if (p.vocab.size() != ds.vocab_size) throw CheckpointError("checkpoint: vocabulary size differs from decoder");
    p.question = meta.at("question");
    p.max_new_tokens = meta.at("max_new_tokens");
    if (p.encoder.checksum() != meta.at("encoder_checksum").get<std::uint64_t>())
      throw CheckpointError("checkpoint: encoder checksum mismatch");
    if (p.decoder.checksum() != meta.at("decoder_checksum").get<std::uint64_t>())
      throw CheckpointError("checkpoint: decoder checksum mismatch");
    out.benchmark_classes = meta.at("benchmark_classes").get<std::vector<std::string>>();
    out.pretrain_classes = meta.at("pretrain_classes").get<std::vector<std::string>>();
    const auto& r = meta.at("pretrain");
    out.report.encoder_accuracy = r.at("encoder_accuracy");
    out.report.encoder_steps = r.at("encoder_steps");
    out.report.decoder.caption_loss = r.at("caption_loss");
    out.report.decoder.language_loss = r.at("language_loss");
    out.report.decoder.language_decode_accuracy = r.at("language_decode_accuracy");
    out.report.decoder.steps = r.at("decoder_steps");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad meta section: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return out;
}

inline void write_checkpoint(const CheckpointData& c, const std::string& path) {
  const auto bytes = pipeline_to_checkpoint(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("checkpoint: cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw CheckpointError("checkpoint: cannot write " + path);
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path);
  return checkpoint_to_pipeline(read_file_bytes(path));
}

}  // namespace gencil
