// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "gencil/harness.hpp"

namespace gencil {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs; each member is one flat config key.
struct Config {
  SyntheticSpec data;
  PipelineConfig pipeline;
  HarnessConfig harness;
  std::string method = "all";
  std::string out_dir = "out";
  std::string pretrain_data;  // empty: <out_dir>/pretrain.gcil
  std::string train_data;
  std::string test_data;
  std::string checkpoint;     // empty: <out_dir>/checkpoint.gckp

  std::uint64_t seed() const { return harness.seed; }
  void set_seed(std::uint64_t s) {
    harness.seed = s;
    pipeline.seed = s;
    data.seed = s;
  }

  std::string pretrain_path() const { return pretrain_data.empty() ? out_dir + "/pretrain.gcil" : pretrain_data; }
  std::string train_path() const { return train_data.empty() ? out_dir + "/train.gcil" : train_data; }
  std::string test_path() const { return test_data.empty() ? out_dir + "/test.gcil" : test_data; }
  std::string checkpoint_path() const { return checkpoint.empty() ? out_dir + "/checkpoint.gckp" : checkpoint; }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config: " + key + ": cannot parse \"" + v + "\"");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + ": expected true or false, got \"" + v + "\"");
}

inline std::string render_double(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

struct KeySpec {
  std::string name;
  std::string doc;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

template <class T>
std::string render_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
  else if constexpr (std::is_same_v<T, double>) return render_double(v);
  else if constexpr (std::is_same_v<T, std::string>) return v;
  else return std::to_string(v);
}

template <class T>
T parse_value(const std::string& key, const std::string& v) {
  if constexpr (std::is_same_v<T, bool>) return parse_bool(key, v);
  else if constexpr (std::is_same_v<T, std::string>) return v;
  else return parse_number<T>(key, v);
}

/// `ref` maps a Config to the field the key controls.
template <class F>
KeySpec field_key(std::string name, std::string doc, F ref) {
  using T = std::remove_reference_t<decltype(ref(std::declval<Config&>()))>;
  return {name, std::move(doc), [ref](const Config& c) { return render_value(ref(const_cast<Config&>(c))); },
          [ref, name](Config& c, const std::string& v) { ref(c) = parse_value<T>(name, v); }};
}

}  // namespace detail

/// The documented key table, in rendering order.
inline const std::vector<detail::KeySpec>& config_keys() {
  using namespace detail;
  using C = Config;
  static const std::vector<KeySpec> keys = [] {
    std::vector<KeySpec> k;
    k.push_back({"seed", "seed for data, pretraining, curriculum and training",
                 [](const C& c) { return std::to_string(c.seed()); },
                 [](C& c, const std::string& v) { c.set_seed(parse_number<std::uint64_t>("seed", v)); }});
    k.push_back({"scheme", "b0(n), bb(base,n) or fscil(base,way,shot,sessions)",
                 [](const C& c) { return c.harness.scheme.str(); },
                 [](C& c, const std::string& v) {
                   try {
                     c.harness.scheme = parse_scheme(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("config: ") + e.what());
                   }
                 }});
    k.push_back({"method", "gmm, linear_probe, zero_shot or all", [](const C& c) { return c.method; },
                 [](C& c, const std::string& v) {
                   try {
                     parse_methods(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("config: ") + e.what());
                   }
                   c.method = v;
                 }});
#define GENCIL_KEY(name, doc, expr) k.push_back(field_key(name, doc, [](C& c) -> auto& { return expr; }))
    GENCIL_KEY("out_dir", "output directory", c.out_dir);
    GENCIL_KEY("pretrain_data", "pretraining split path (empty: <out_dir>/pretrain.gcil)", c.pretrain_data);
    GENCIL_KEY("train_data", "benchmark train split path (empty: <out_dir>/train.gcil)", c.train_data);
    GENCIL_KEY("test_data", "benchmark test split path (empty: <out_dir>/test.gcil)", c.test_data);
    GENCIL_KEY("checkpoint", "checkpoint path (empty: <out_dir>/checkpoint.gckp)", c.checkpoint);

    GENCIL_KEY("image_size", "synthetic image side in pixels", c.data.image_size);
    GENCIL_KEY("num_classes", "synthetic benchmark classes", c.data.num_classes);
    GENCIL_KEY("pretrain_classes", "synthetic pretraining classes, disjoint from the benchmark", c.data.pretrain_classes);
    GENCIL_KEY("train_per_class", "synthetic train images per class", c.data.train_per_class);
    GENCIL_KEY("test_per_class", "synthetic test images per class", c.data.test_per_class);
    GENCIL_KEY("pretrain_per_class", "synthetic pretraining images per class", c.data.pretrain_per_class);
    GENCIL_KEY("noise", "synthetic noise amplitude in [0, 1]", c.data.noise);
    GENCIL_KEY("data_workers", "generator threads", c.data.workers);

    GENCIL_KEY("feature_dim", "encoder feature width", c.pipeline.encoder.feature_dim);
    GENCIL_KEY("encoder_steps", "encoder pretraining step budget", c.pipeline.encoder_pretrain.max_steps);
    GENCIL_KEY("encoder_lr", "encoder pretraining learning rate", c.pipeline.encoder_pretrain.lr);
    GENCIL_KEY("encoder_gate", "minimum encoder pretraining accuracy", c.pipeline.encoder_pretrain.accuracy_gate);
    GENCIL_KEY("image_tokens", "image tokens per image (P)", c.pipeline.image_tokens);
    GENCIL_KEY("model_dim", "decoder width (D_dec)", c.pipeline.model_dim);
    GENCIL_KEY("decoder_blocks", "decoder blocks", c.pipeline.blocks);
    GENCIL_KEY("decoder_ff_dim", "decoder feed-forward width", c.pipeline.ff_dim);
    GENCIL_KEY("decoder_steps", "decoder pretraining steps", c.pipeline.decoder_pretrain.steps);
    GENCIL_KEY("decoder_lr", "decoder pretraining learning rate", c.pipeline.decoder_pretrain.lr);
    GENCIL_KEY("decoder_batch_size", "decoder pretraining batch size", c.pipeline.decoder_pretrain.batch_size);
    GENCIL_KEY("caption_gate", "maximum pretraining caption loss", c.pipeline.decoder_pretrain.gate);
    GENCIL_KEY("language_corpus", "add the class-name language corpus to pretraining", c.pipeline.decoder_pretrain.language_corpus);
    GENCIL_KEY("question", "question text", c.pipeline.question);
    GENCIL_KEY("max_new_tokens", "greedy decoding cap", c.pipeline.max_new_tokens);

    GENCIL_KEY("base_epochs", "epochs on the first session", c.harness.base_epochs);
    GENCIL_KEY("incr_epochs", "epochs on later sessions", c.harness.incr_epochs);
    GENCIL_KEY("base_lr", "learning rate on the first session", c.harness.base_lr);
    GENCIL_KEY("incr_lr", "learning rate on later sessions", c.harness.incr_lr);
    GENCIL_KEY("lr_min", "cosine schedule floor", c.harness.lr_min);
    GENCIL_KEY("batch_size", "task training batch size", c.harness.batch_size);
    GENCIL_KEY("replay_fraction", "share of each batch drawn from exemplars", c.harness.replay_fraction);
    GENCIL_KEY("exemplars_per_class", "exemplar budget per class (0: exemplar-free)", c.harness.exemplars_per_class);
    GENCIL_KEY("train_decoder", "also fine-tune the decoder during tasks", c.harness.train_decoder);
    GENCIL_KEY("eval_workers", "evaluation threads", c.harness.eval_workers);
    GENCIL_KEY("lp_epochs", "linear probe epochs per session", c.harness.lp_epochs);
    GENCIL_KEY("lp_lr", "linear probe learning rate", c.harness.lp_lr);
    GENCIL_KEY("lp_batch_size", "linear probe batch size", c.harness.lp_batch_size);
    GENCIL_KEY("lp_exemplars_per_class", "linear probe exemplar budget per class", c.harness.lp_exemplars_per_class);
#undef GENCIL_KEY
    k.push_back({"optimizer", "task optimizer: sgd or adam", [](const C& c) { return to_string(c.harness.optimizer); },
                 [](C& c, const std::string& v) {
                   try {
                     c.harness.optimizer = parse_optimizer_kind(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("config: ") + e.what());
                   }
                 }});
    return k;
  }();
  return keys;
}

inline const detail::KeySpec& config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  throw ConfigError("config: unknown key \"" + name + "\"");
}

inline void set_config_value(Config& c, const std::string& key, const std::string& value) {
  config_key(key).set(c, value);
}

/// Applies `key = value` lines on top of `base`. `#` starts a comment.
inline Config parse_config(std::string_view text, Config base = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq)), value = detail::trim(t.substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh)
      throw ConfigError("config: line " + std::to_string(lineno) + ": \"" + key + "\" already set on line " +
                        std::to_string(it->second));
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config: line " + std::to_string(lineno) + ": " + std::string(e.what()).substr(8));
    }
  }
  return base;
}

inline Config read_config(const std::string& path, Config base = {}) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("config not found: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

/// Every key with its effective value; parse_config(render_config(c)) == c.
inline std::string render_config(const Config& c, bool with_docs = false) {
  std::string out;
  for (const auto& k : config_keys()) {
    if (with_docs) out += "# " + k.doc + "\n";
    out += k.name + " = " + k.get(c) + "\n";
  }
  return out;
}

inline std::vector<std::pair<std::string, std::string>> config_items(const Config& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.name, k.get(c));
  return out;
}

inline bool operator==(const Config& a, const Config& b) { return config_items(a) == config_items(b); }

}  // namespace gencil
