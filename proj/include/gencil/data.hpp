// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "gencil/hash.hpp"
#include "gencil/rng.hpp"

namespace gencil {

/// Images with labels and a class-name table, pixels stored contiguously.
struct Dataset {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::vector<std::string> class_names;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint8_t> pixels;

  std::size_t image_size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  std::size_t size() const { return labels.size(); }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---- synthetic benchmark --------------------------------------------------

inline const std::array<const char*, 6>& shape_words() {
  static const std::array<const char*, 6> w{"square", "circle", "cross", "stripes", "ring", "checker"};
  return w;
}
inline const std::array<const char*, 2>& tone_words() {
  static const std::array<const char*, 2> w{"dark", "light"};
  return w;
}
inline const std::array<const char*, 2>& texture_words() {
  static const std::array<const char*, 2> w{"plain", "dotted"};
  return w;
}

struct Attributes {
  int tone = 0;
  int texture = 0;
  int shape = 0;

  std::string name() const {
    return std::string(tone_words()[tone]) + " " + texture_words()[texture] + " " +
           shape_words()[shape];
  }
  friend bool operator==(const Attributes&, const Attributes&) = default;
};

inline constexpr std::size_t kGrammarCapacity = 24;

/// All attribute combinations. The head of the list is reserved for
/// pretraining and spreads every tone/texture pair over distinct shapes; the
/// tail follows canonical (tone, texture, shape) order.
inline std::vector<Attributes> grammar_order() {
  std::vector<Attributes> order{
      {0, 0, 0},  // dark plain square
      {1, 1, 1},  // light dotted circle
      {0, 1, 3},  // dark dotted stripes
      {1, 0, 2},  // light plain cross
      {0, 0, 4},  // dark plain ring
      {1, 1, 5},  // light dotted checker
      {0, 1, 1},  // dark dotted circle
      {1, 0, 0},  // light plain square
  };
  for (int t = 0; t < 2; ++t)
    for (int x = 0; x < 2; ++x)
      for (int s = 0; s < 6; ++s) {
        Attributes a{t, x, s};
        if (std::find(order.begin(), order.end(), a) == order.end()) order.push_back(a);
      }
  return order;
}

struct SyntheticSpec {
  std::uint32_t image_size = 32;
  std::size_t num_classes = 20;
  std::size_t pretrain_classes = 4;
  std::size_t train_per_class = 60;
  std::size_t test_per_class = 20;
  std::size_t pretrain_per_class = 60;
  /// In [0, 1]. Scales pixel noise (uniform, up to +-96 levels) and geometric
  /// jitter (shift up to 8 px, size up to 4 px). Zero gives identical images
  /// within a class.
  double noise = 0.25;
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

struct SyntheticData {
  Dataset pretrain;
  Dataset train;
  Dataset test;
};

enum class Split : std::uint64_t { kPretrain = 0, kTrain = 1, kTest = 2 };

/// Renders one example. Pure in (spec, split, class attributes, index).
inline void render_example(const SyntheticSpec& spec, Split split, const Attributes& attr,
                           std::size_t index, std::span<std::uint8_t> out) {
  const int n = static_cast<int>(spec.image_size);
  CounterRng rng{spec.seed, static_cast<std::uint64_t>(split),
                 static_cast<std::uint64_t>(attr.tone * 100 + attr.texture * 10 + attr.shape),
                 static_cast<std::uint64_t>(index)};
  const int max_shift = static_cast<int>(std::floor(spec.noise * 8.0));
  const int max_grow = static_cast<int>(std::floor(spec.noise * 4.0));
  auto jitter = [&rng](int m) { return m == 0 ? 0 : static_cast<int>(rng.below(2 * m + 1)) - m; };
  const double scale = n / 32.0;
  const int cx = n / 2 + jitter(max_shift);
  const int cy = n / 2 + jitter(max_shift);
  const int r = static_cast<int>(std::lround(9 * scale)) + jitter(max_grow);
  const int dot_phase_x = max_shift > 0 ? static_cast<int>(rng.below(3)) : 0;
  const int dot_phase_y = max_shift > 0 ? static_cast<int>(rng.below(3)) : 0;
  const double bg = 128.0;
  const double fg = attr.tone == 0 ? 40.0 : 215.0;
  const double amp = spec.noise * 96.0;

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int dx = x - cx, dy = y - cy;
      const double dist = std::sqrt(static_cast<double>(dx * dx + dy * dy));
      const bool in_box = std::abs(dx) <= r && std::abs(dy) <= r;
      bool inside = false;
      switch (attr.shape) {
        case 0: inside = in_box; break;
        case 1: inside = dist <= r + 0.5; break;
        case 2: inside = (std::abs(dx) <= 2 && std::abs(dy) <= r) || (std::abs(dy) <= 2 && std::abs(dx) <= r); break;
        case 3: inside = in_box && ((dy + r) / 3) % 2 == 0; break;
        case 4: inside = dist <= r + 0.5 && dist >= r - 3.0; break;
        case 5: inside = in_box && (((dx + r) / 4) + ((dy + r) / 4)) % 2 == 0; break;
      }
      if (inside && attr.texture == 1)
        inside = !(((x + dot_phase_x) % 3 == 0) && ((y + dot_phase_y) % 3 == 0));
      double v = inside ? fg : bg;
      if (amp > 0.0) v += rng.uniform(-amp, amp);
      out[static_cast<std::size_t>(y * n + x)] =
          static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
}

namespace detail {

inline Dataset render_split(const SyntheticSpec& spec, Split split,
                            const std::vector<Attributes>& classes, std::size_t per_class) {
  Dataset d;
  d.height = d.width = spec.image_size;
  d.channels = 1;
  for (const auto& a : classes) d.class_names.push_back(a.name());
  const std::size_t count = classes.size() * per_class;
  d.labels.resize(count);
  d.pixels.resize(count * d.image_size());
  for (std::size_t i = 0; i < count; ++i) d.labels[i] = static_cast<std::uint32_t>(i / per_class);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      render_example(spec, split, classes[i / per_class], i % per_class,
                     {d.pixels.data() + i * d.image_size(), d.image_size()});
  };
  const unsigned workers = std::max(1u, spec.workers);
  if (workers == 1 || count < 2) {
    work(0, count);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (count + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t b = std::min(count, w * chunk), e = std::min(count, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& t : pool) t.join();
  }
  return d;
}

}  // namespace detail

/// Benchmark and pretraining class lists; never overlap.
inline std::pair<std::vector<Attributes>, std::vector<Attributes>> partition_classes(
    std::size_t num_classes, std::size_t pretrain_classes) {
  if (num_classes == 0) throw std::invalid_argument("synthetic: need at least one benchmark class");
  if (num_classes + pretrain_classes > kGrammarCapacity)
    throw std::invalid_argument("synthetic: " + std::to_string(num_classes) + " benchmark + " +
                                std::to_string(pretrain_classes) +
                                " pretrain classes exceed grammar capacity of " +
                                std::to_string(kGrammarCapacity));
  auto order = grammar_order();
  std::vector<Attributes> pre(order.begin(), order.begin() + static_cast<long>(pretrain_classes));
  std::vector<Attributes> rest(order.begin() + static_cast<long>(pretrain_classes), order.end());
  std::sort(rest.begin(), rest.end(), [](const Attributes& a, const Attributes& b) {
    return std::tie(a.tone, a.texture, a.shape) < std::tie(b.tone, b.texture, b.shape);
  });
  rest.resize(num_classes);
  return {rest, pre};
}

inline SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  if (spec.image_size < 16) throw std::invalid_argument("synthetic: image size must be >= 16");
  if (spec.noise < 0.0 || spec.noise > 1.0) throw std::invalid_argument("synthetic: noise must lie in [0, 1]");
  auto [bench, pre] = partition_classes(spec.num_classes, spec.pretrain_classes);
  SyntheticData out;
  if (!pre.empty()) out.pretrain = detail::render_split(spec, Split::kPretrain, pre, spec.pretrain_per_class);
  out.train = detail::render_split(spec, Split::kTrain, bench, spec.train_per_class);
  out.test = detail::render_split(spec, Split::kTest, bench, spec.test_per_class);
  return out;
}

// ---- GCIL container ---------------------------------------------------------

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kBadVersion, kTruncated, kBadLabel, kBadHeader, kTrailing };
  DatasetError(Kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::array<char, 4> kDatasetMagic{'G', 'C', 'I', 'L'};
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      throw DatasetError(DatasetError::Kind::kTruncated,
                         std::string("dataset: truncated ") + what + " at byte offset " +
                             std::to_string(pos_) + " (need " + std::to_string(n) + ", have " +
                             std::to_string(remaining()) + ")");
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  if (d.pixels.size() != d.size() * d.image_size())
    throw std::invalid_argument("dataset: pixel buffer does not match labels and image shape");
  std::vector<std::uint8_t> out(kDatasetMagic.begin(), kDatasetMagic.end());
  detail::put_u32(out, kDatasetVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(d.size()));
  detail::put_u32(out, d.height);
  detail::put_u32(out, d.width);
  detail::put_u32(out, d.channels);
  detail::put_u32(out, static_cast<std::uint32_t>(d.class_names.size()));
  for (const auto& name : d.class_names) {
    if (name.size() > 0xffff) throw std::invalid_argument("dataset: class name too long");
    detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  }
  const std::size_t img = d.image_size();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] >= d.class_names.size())
      throw std::invalid_argument("dataset: label " + std::to_string(d.labels[i]) + " >= class count");
    detail::put_u32(out, d.labels[i]);
    out.insert(out.end(), d.pixels.begin() + static_cast<long>(i * img),
               d.pixels.begin() + static_cast<long>((i + 1) * img));
  }
  return out;
}

inline Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  using K = DatasetError::Kind;
  detail::ByteReader r(bytes);
  auto magic = r.take(4, "header");
  if (!std::equal(magic.begin(), magic.end(), kDatasetMagic.begin()))
    throw DatasetError(K::kBadMagic, "dataset: bad magic");
  const std::uint32_t version = r.u32("header");
  if (version != kDatasetVersion)
    throw DatasetError(K::kBadVersion, "dataset: unsupported version " + std::to_string(version));
  Dataset d;
  const std::uint32_t count = r.u32("header");
  d.height = r.u32("header");
  d.width = r.u32("header");
  d.channels = r.u32("header");
  const std::uint32_t classes = r.u32("header");
  const std::uint64_t img = static_cast<std::uint64_t>(d.height) * d.width * d.channels;
  if (img == 0 || img > (1ULL << 28)) throw DatasetError(K::kBadHeader, "dataset: implausible image shape");
  if (classes == 0 && count > 0) throw DatasetError(K::kBadHeader, "dataset: examples without classes");
  // each class entry needs at least its 2-byte length
  r.need(static_cast<std::size_t>(classes) * 2, "class table");
  d.class_names.reserve(classes);
  for (std::uint32_t c = 0; c < classes; ++c) {
    const std::uint16_t len = r.u16("class table");
    auto s = r.take(len, "class table");
    d.class_names.emplace_back(s.begin(), s.end());
  }
  const std::uint64_t record = 4 + img;
  if (static_cast<std::uint64_t>(r.remaining()) < record * count)
    throw DatasetError(K::kTruncated, "dataset: truncated record region at byte offset " +
                                          std::to_string(r.offset() + (r.remaining() / record) * record) +
                                          " (header declares " + std::to_string(count) + " records)");
  d.labels.reserve(count);
  d.pixels.reserve(static_cast<std::size_t>(img * count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint32_t label = r.u32("record");
    if (label >= classes)
      throw DatasetError(K::kBadLabel, "dataset: label " + std::to_string(label) + " >= class count " +
                                           std::to_string(classes) + " at byte offset " + std::to_string(at));
    d.labels.push_back(label);
    auto px = r.take(static_cast<std::size_t>(img), "record");
    d.pixels.insert(d.pixels.end(), px.begin(), px.end());
  }
  if (r.remaining() != 0)
    throw DatasetError(K::kTrailing, "dataset: " + std::to_string(r.remaining()) +
                                         " trailing bytes after last record");
  return d;
}

inline void write_dataset(const Dataset& d, const std::string& path) {
  auto bytes = encode_dataset(d);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DatasetError(DatasetError::Kind::kIo, "dataset: cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DatasetError(DatasetError::Kind::kIo, "dataset: write failed for " + path);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError(DatasetError::Kind::kIo, "dataset not found: " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline Dataset read_dataset(const std::string& path) { return decode_dataset(read_file_bytes(path)); }

inline std::uint64_t dataset_checksum(const Dataset& d) { return fnv1a64(encode_dataset(d)); }

}  // namespace gencil
