// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gencil/matcher.hpp"
#include "gencil/optim.hpp"
#include "gencil/pipeline.hpp"

namespace gencil {

// ---------------------------------------------------------------------------
// Curricula

enum class SchemeKind { kB0, kBb, kFscil };

struct Scheme {
  SchemeKind kind = SchemeKind::kB0;
  std::size_t tasks = 1;     // B0: number of tasks; Bb: incremental tasks
  std::size_t base = 0;      // Bb / FSCIL base classes
  std::size_t way = 0;       // FSCIL
  std::size_t shot = 0;      // FSCIL
  std::size_t sessions = 0;  // FSCIL incremental sessions

  static Scheme b0(std::size_t n) { return {SchemeKind::kB0, n, 0, 0, 0, 0}; }
  static Scheme bb(std::size_t b, std::size_t n) { return {SchemeKind::kBb, n, b, 0, 0, 0}; }
  static Scheme fscil(std::size_t base, std::size_t way, std::size_t shot, std::size_t sessions) {
    return {SchemeKind::kFscil, sessions, base, way, shot, sessions};
  }

  std::string str() const {
    switch (kind) {
      case SchemeKind::kB0: return "b0(" + std::to_string(tasks) + ")";
      case SchemeKind::kBb: return "bb(" + std::to_string(base) + "," + std::to_string(tasks) + ")";
      case SchemeKind::kFscil:
        return "fscil(" + std::to_string(base) + "," + std::to_string(way) + "," + std::to_string(shot) + "," +
               std::to_string(sessions) + ")";
    }
    return {};
  }

  friend bool operator==(const Scheme&, const Scheme&) = default;
};

/// Accepts b0(n), bb(b,n) (also spelled b<b>(b,n)) and fscil(base,way,shot,sessions),
/// case-insensitive, whitespace ignored.
inline Scheme parse_scheme(std::string_view text) {
  std::string s;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  const auto open = s.find('(');
  if (open == std::string::npos || s.back() != ')') throw std::invalid_argument("scheme: cannot parse \"" + std::string(text) + "\"");
  const std::string name = s.substr(0, open);
  std::vector<std::size_t> args;
  std::string cur;
  for (std::size_t i = open + 1; i + 1 <= s.size() - 1; ++i) {
    const char c = s[i];
    if (c == ',' ) {
      if (cur.empty()) throw std::invalid_argument("scheme: empty argument in \"" + std::string(text) + "\"");
      args.push_back(std::stoul(cur));
      cur.clear();
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    } else {
      throw std::invalid_argument("scheme: unexpected '" + std::string(1, c) + "' in \"" + std::string(text) + "\"");
    }
  }
  if (cur.empty()) throw std::invalid_argument("scheme: missing argument in \"" + std::string(text) + "\"");
  args.push_back(std::stoul(cur));
  if (name == "b0" && args.size() == 1) return Scheme::b0(args[0]);
  if (name == "fscil" && args.size() == 4) return Scheme::fscil(args[0], args[1], args[2], args[3]);
  if (args.size() == 2 && (name == "bb" || (name.size() > 1 && name[0] == 'b' &&
                                            name.substr(1) == std::to_string(args[0]))))
    return Scheme::bb(args[0], args[1]);
  throw std::invalid_argument("scheme: unknown scheme \"" + std::string(text) + "\"");
}

struct Task {
  std::vector<ClassId> classes;
  std::optional<std::size_t> shots;  // empty: all training data
  std::vector<std::size_t> train_refs;
  std::vector<std::size_t> test_refs;
};

struct Curriculum {
  Scheme scheme;
  std::size_t total_classes = 0;
  std::uint64_t seed = 0;
  std::vector<Task> tasks;

  std::vector<ClassId> classes_up_to(std::size_t session) const {
    std::vector<ClassId> out;
    for (std::size_t t = 0; t <= session; ++t) out.insert(out.end(), tasks[t].classes.begin(), tasks[t].classes.end());
    return out;
  }
};

/// Seeded class-to-task assignment. Example refs are filled by bind_examples.
inline Curriculum make_curriculum(std::size_t total, const Scheme& scheme, std::uint64_t seed) {
  if (total == 0) throw std::invalid_argument("curriculum: no classes");
  std::vector<std::size_t> sizes;
  std::optional<std::size_t> inc_shots;
  switch (scheme.kind) {
    case SchemeKind::kB0:
      if (scheme.tasks == 0 || total % scheme.tasks != 0)
        throw std::invalid_argument("curriculum: " + std::to_string(total) + " classes do not split evenly into " +
                                    std::to_string(scheme.tasks) + " tasks");
      sizes.assign(scheme.tasks, total / scheme.tasks);
      break;
    case SchemeKind::kBb:
      if (scheme.base == 0 || scheme.base >= total || scheme.tasks == 0 || (total - scheme.base) % scheme.tasks != 0)
        throw std::invalid_argument("curriculum: " + std::to_string(total - std::min(total, scheme.base)) +
                                    " remaining classes do not split evenly into " + std::to_string(scheme.tasks) + " tasks");
      sizes.push_back(scheme.base);
      sizes.insert(sizes.end(), scheme.tasks, (total - scheme.base) / scheme.tasks);
      break;
    case SchemeKind::kFscil:
      if (scheme.way == 0 || scheme.shot == 0 || scheme.base == 0 ||
          scheme.base + scheme.way * scheme.sessions != total)
        throw std::invalid_argument("curriculum: fscil needs base + way*sessions == total classes (" +
                                    std::to_string(scheme.base) + " + " + std::to_string(scheme.way) + "*" +
                                    std::to_string(scheme.sessions) + " != " + std::to_string(total) + ")");
      sizes.push_back(scheme.base);
      sizes.insert(sizes.end(), scheme.sessions, scheme.way);
      inc_shots = scheme.shot;
      break;
  }
  std::vector<ClassId> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = ClassId(i);
  CounterRng rng{seed, 0xc0a55};
  shuffle_in_place(order, rng);
  Curriculum c{scheme, total, seed, {}};
  std::size_t off = 0;
  for (std::size_t t = 0; t < sizes.size(); ++t) {
    Task task;
    task.classes.assign(order.begin() + long(off), order.begin() + long(off + sizes[t]));
    if (t > 0) task.shots = inc_shots;
    off += sizes[t];
    c.tasks.push_back(std::move(task));
  }
  return c;
}

/// Fills train/test refs from dataset labels. Few-shot sessions keep a seeded
/// per-class sample of exactly `shots` training examples.
inline void bind_examples(Curriculum& c, std::span<const std::uint32_t> train_labels,
                          std::span<const std::uint32_t> test_labels) {
  std::map<ClassId, std::vector<std::size_t>> train_by, test_by;
  for (std::size_t i = 0; i < train_labels.size(); ++i) {
    if (train_labels[i] >= c.total_classes) throw std::invalid_argument("curriculum: train label out of range");
    train_by[ClassId(train_labels[i])].push_back(i);
  }
  for (std::size_t i = 0; i < test_labels.size(); ++i) {
    if (test_labels[i] >= c.total_classes) throw std::invalid_argument("curriculum: test label out of range");
    test_by[ClassId(test_labels[i])].push_back(i);
  }
  for (auto& task : c.tasks) {
    task.train_refs.clear();
    task.test_refs.clear();
    for (ClassId k : task.classes) {
      auto refs = train_by[k];
      if (task.shots) {
        if (refs.size() < *task.shots)
          throw std::invalid_argument("curriculum: class " + std::to_string(k) + " has " + std::to_string(refs.size()) +
                                      " training examples, fewer than " + std::to_string(*task.shots) + " shots");
        CounterRng rng{c.seed, 0x5407, std::uint64_t(k)};
        shuffle_in_place(refs, rng);
        refs.resize(*task.shots);
        std::sort(refs.begin(), refs.end());
      }
      task.train_refs.insert(task.train_refs.end(), refs.begin(), refs.end());
      const auto& te = test_by[k];
      if (te.empty()) throw std::invalid_argument("curriculum: class " + std::to_string(k) + " has no test examples");
      task.test_refs.insert(task.test_refs.end(), te.begin(), te.end());
    }
    std::sort(task.train_refs.begin(), task.train_refs.end());
    std::sort(task.test_refs.begin(), task.test_refs.end());
  }
}

// ---------------------------------------------------------------------------
// Exemplars

class ExemplarStore {
 public:
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [k, refs] : kept_) n += refs.size();
    return n;
  }
  bool empty() const { return size() == 0; }
  const std::map<ClassId, std::vector<std::size_t>>& per_class() const { return kept_; }
  bool contains_class(ClassId k) const { return kept_.contains(k); }

  std::vector<std::size_t> refs() const {
    std::vector<std::size_t> out;
    for (const auto& [k, r] : kept_) out.insert(out.end(), r.begin(), r.end());
    return out;
  }

  void keep(ClassId k, std::vector<std::size_t> refs) {
    if (kept_.contains(k)) throw std::logic_error("exemplars: class " + std::to_string(k) + " stored twice");
    kept_.emplace(k, std::move(refs));
  }

 private:
  std::map<ClassId, std::vector<std::size_t>> kept_;
};

/// Uniform random per-class sample without replacement of the task's own
/// training refs. Earlier classes are left untouched.
inline void update_exemplars(ExemplarStore& store, const Task& task, std::span<const std::uint32_t> train_labels,
                             std::size_t budget_per_class, std::uint64_t seed) {
  if (budget_per_class == 0) return;
  for (ClassId k : task.classes) {
    std::vector<std::size_t> refs;
    for (std::size_t r : task.train_refs)
      if (ClassId(train_labels[r]) == k) refs.push_back(r);
    CounterRng rng{seed, 0xe8e, std::uint64_t(k)};
    shuffle_in_place(refs, rng);
    if (refs.size() > budget_per_class) refs.resize(budget_per_class);
    std::sort(refs.begin(), refs.end());
    store.keep(k, std::move(refs));
  }
}

// ---------------------------------------------------------------------------
// Metrics

inline double metric_avg(std::span<const double> seen_overall) {
  if (seen_overall.empty()) throw std::invalid_argument("metric_avg: no sessions");
  double s = 0.0;
  for (double x : seen_overall) s += x;
  return s / double(seen_overall.size());
}

inline double metric_last(std::span<const double> seen_overall) {
  if (seen_overall.empty()) throw std::invalid_argument("metric_last: no sessions");
  return seen_overall.back();
}

inline double metric_pd(double session0, double last) {
  if (session0 < 0 || session0 > 100 || last < 0 || last > 100)
    throw std::invalid_argument("metric_pd: accuracies must lie in [0, 100]");
  return session0 - last;
}

/// Two-decimal rounding used for every reported percentage.
inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

/// acc[i][j] = accuracy on task j's test set after training task i (j <= i).
struct AccuracyMatrix {
  std::vector<std::vector<double>> acc;
  std::vector<double> seen_overall;

  void add_row(std::vector<double> row, double overall) {
    if (row.size() != acc.size() + 1)
      throw std::logic_error("accuracy matrix: row " + std::to_string(acc.size()) + " must have " +
                             std::to_string(acc.size() + 1) + " entries");
    for (double x : row)
      if (!(x >= 0.0 && x <= 1.0)) throw std::logic_error("accuracy matrix: entry outside [0,1]");
    if (!(overall >= 0.0 && overall <= 1.0)) throw std::logic_error("accuracy matrix: overall outside [0,1]");
    acc.push_back(std::move(row));
    seen_overall.push_back(overall);
  }

  std::size_t sessions() const { return acc.size(); }
  std::vector<double> seen_overall_percent() const {
    std::vector<double> out;
    for (double x : seen_overall) out.push_back(100.0 * x);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Data bound to a frozen encoder

struct Benchmark {
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  Tensor train_features;
  Tensor test_features;

  std::span<const double> train_feature(std::size_t i) const {
    return {train_features.data() + i * train_features.cols(), train_features.cols()};
  }
  std::span<const double> test_feature(std::size_t i) const {
    return {test_features.data() + i * test_features.cols(), test_features.cols()};
  }
};

inline Benchmark make_benchmark(const Dataset& train, const Dataset& test, Encoder& enc) {
  if (train.class_names != test.class_names) throw std::invalid_argument("benchmark: train/test class tables differ");
  return {&train, &test, encode_features(train, enc), encode_features(test, enc)};
}

// ---------------------------------------------------------------------------
// Evaluation

struct Verdict {
  ClassId id = 0;
  bool empty_generation = false;
};

using PredictFn = std::function<Verdict(std::size_t test_index)>;

struct EvalRow {
  std::vector<double> per_task;
  double overall = 0.0;
  std::size_t empty_generation = 0;
  std::vector<ClassId> predictions;  // one per seen test ref, in ref order
};

/// Scores every seen test example; workers split the refs, and the reduction
/// is a sum of indicators, so the worker count never changes the result.
inline EvalRow evaluate(const Curriculum& c, std::size_t session, std::span<const std::uint32_t> test_labels,
                        const std::set<ClassId>& seen, const PredictFn& predict_fn, std::size_t workers = 1) {
  std::vector<std::size_t> refs;
  std::vector<std::size_t> task_of;
  for (std::size_t t = 0; t <= session; ++t)
    for (std::size_t r : c.tasks[t].test_refs) {
      if (!seen.contains(ClassId(test_labels[r])))
        throw std::logic_error("evaluate: test example " + std::to_string(r) + " has unseen label " +
                               std::to_string(test_labels[r]));
      refs.push_back(r);
      task_of.push_back(t);
    }
  std::vector<Verdict> out(refs.size());
  workers = std::max<std::size_t>(1, std::min(workers, refs.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < refs.size(); ++i) out[i] = predict_fn(refs[i]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < refs.size(); i += workers) out[i] = predict_fn(refs[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  EvalRow row;
  std::vector<std::size_t> correct(session + 1, 0), total(session + 1, 0);
  std::size_t all_correct = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const bool ok = out[i].id == ClassId(test_labels[refs[i]]);
    correct[task_of[i]] += ok;
    ++total[task_of[i]];
    all_correct += ok;
    row.empty_generation += out[i].empty_generation;
    row.predictions.push_back(out[i].id);
  }
  for (std::size_t t = 0; t <= session; ++t) row.per_task.push_back(double(correct[t]) / double(total[t]));
  row.overall = double(all_correct) / double(refs.size());
  return row;
}

// ---------------------------------------------------------------------------
// Configuration and results

struct HarnessConfig {
  Scheme scheme = Scheme::b0(4);
  std::uint64_t seed = 1;
  std::size_t base_epochs = 2;
  std::size_t incr_epochs = 2;
  double base_lr = 1e-2;
  double incr_lr = 1e-2;
  double lr_min = 0.0;
  std::size_t batch_size = 8;
  double replay_fraction = 0.25;
  std::size_t exemplars_per_class = 20;
  bool train_decoder = false;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t eval_workers = 1;
  std::size_t lp_epochs = 200;
  double lp_lr = 5e-2;
  std::size_t lp_batch_size = 32;
  std::size_t lp_exemplars_per_class = 0;
};

struct AuditEntry {
  std::size_t session = 0;
  std::uint64_t encoder_expected = 0;
  std::uint64_t encoder_actual = 0;
  bool decoder_checked = false;
  std::uint64_t decoder_expected = 0;
  std::uint64_t decoder_actual = 0;

  bool ok() const {
    return encoder_expected == encoder_actual && (!decoder_checked || decoder_expected == decoder_actual);
  }
};

struct MethodResult {
  std::string method;
  AccuracyMatrix matrix;
  std::size_t empty_generation = 0;
  std::vector<AuditEntry> audit;
  std::map<ClassId, std::vector<std::size_t>> exemplars;
  std::vector<std::string> registry;
  std::vector<std::size_t> steps_per_session;
  std::vector<double> wall_seconds;

  std::vector<double> seen_overall_percent() const { return matrix.seen_overall_percent(); }
  double avg() const { auto s = seen_overall_percent(); return metric_avg(s); }
  double last() const { auto s = seen_overall_percent(); return metric_last(s); }
  double pd() const { auto s = seen_overall_percent(); return metric_pd(s.front(), s.back()); }
  bool audit_ok() const {
    return std::all_of(audit.begin(), audit.end(), [](const AuditEntry& a) { return a.ok(); });
  }
};

// ---------------------------------------------------------------------------
// Generative classifier

struct TaskTrainStats {
  std::size_t steps = 0;
  double last_loss = 0.0;
  std::vector<std::string> trainable;
  std::vector<std::size_t> replayed;  // sorted unique exemplar refs that entered a batch
};

/// Minimizes the caption loss over the task data plus replayed exemplars. Only
/// the projection is updated unless cfg.train_decoder is set.
inline TaskTrainStats train_task(Pipeline& p, const Task& task, std::size_t session, const ExemplarStore& store,
                                 const Benchmark& bench, const HarnessConfig& cfg) {
  TaskTrainStats st;
  const std::size_t epochs = session == 0 ? cfg.base_epochs : cfg.incr_epochs;
  const double lr = session == 0 ? cfg.base_lr : cfg.incr_lr;
  if (epochs == 0 || task.train_refs.empty()) return st;
  if (cfg.batch_size == 0) throw std::invalid_argument("train_task: batch_size must be positive");
  if (cfg.replay_fraction < 0.0 || cfg.replay_fraction >= 1.0)
    throw std::invalid_argument("train_task: replay_fraction must lie in [0, 1)");

  const Dataset& train = *bench.train;
  const TokenSequence q = p.question_tokens();
  std::map<ClassId, AssembledInput> inputs;
  auto input_for = [&](std::size_t ref) -> const AssembledInput& {
    const ClassId k = ClassId(train.labels[ref]);
    auto it = inputs.find(k);
    if (it == inputs.end()) {
      TokenSequence ans = p.vocab.encode(render_template(train.class_names[std::size_t(k)]));
      it = inputs.emplace(k, assemble_input(p.projection.tokens(), q, &ans)).first;
    }
    return it->second;
  };

  std::vector<Parameter*> params = p.projection.parameters();
  p.projection.set_trainable(true);
  if (cfg.train_decoder) {
    p.decoder.unfreeze();
    for (Parameter* d : p.decoder.parameters()) params.push_back(d);
  }
  for (const Parameter* x : params) st.trainable.push_back(x->name);

  std::vector<std::size_t> replay = store.refs();
  const std::size_t n_replay =
      replay.empty() ? 0 : std::max<std::size_t>(1, std::size_t(std::lround(cfg.replay_fraction * double(cfg.batch_size))));
  if (n_replay >= cfg.batch_size) throw std::invalid_argument("train_task: replay share leaves no room for task data");
  const std::size_t n_task = cfg.batch_size - n_replay;
  const std::size_t per_epoch = (task.train_refs.size() + n_task - 1) / n_task;
  Optimizer opt(cfg.optimizer, OptimizerState(lr, std::min(cfg.lr_min, lr), std::int64_t(epochs * per_epoch)));
  CounterRng rng{cfg.seed, 0x7a5c, session};
  std::vector<std::size_t> order = task.train_refs;
  std::size_t replay_cursor = replay.size();
  std::set<std::size_t> replayed;

  for (std::size_t e = 0; e < epochs; ++e) {
    shuffle_in_place(order, rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<std::size_t> batch(order.begin() + long(b * n_task),
                                     order.begin() + long(std::min(order.size(), (b + 1) * n_task)));
      for (std::size_t r = 0; r < n_replay; ++r) {
        if (replay_cursor == replay.size()) {
          shuffle_in_place(replay, rng);
          replay_cursor = 0;
        }
        replayed.insert(replay[replay_cursor]);
        batch.push_back(replay[replay_cursor++]);
      }
      Graph g;
      g.set_step(opt.state().step);
      const double scale = 1.0 / double(batch.size());
      std::optional<Var> loss;
      for (std::size_t ref : batch) {
        auto f = bench.train_feature(ref);
        Var feat = g.constant(Tensor({1, f.size()}, std::vector<double>(f.begin(), f.end())));
        Var l = p.decoder.answer_loss(g, p.projection.forward(g, feat), input_for(ref), scale);
        loss = loss ? g.add(*loss, l) : l;
      }
      st.last_loss = g.value(*loss).item();
      if (!std::isfinite(st.last_loss))
        throw NumericsError("train_task: non-finite caption loss at step " + std::to_string(st.steps));
      g.backward(*loss);
      opt.step(params);
      ++st.steps;
    }
  }
  p.projection.set_trainable(false);
  if (cfg.train_decoder) p.decoder.set_trainable(false);
  st.replayed.assign(replayed.begin(), replayed.end());
  p.encoder.verify_frozen();
  if (!cfg.train_decoder) p.decoder.verify_frozen();
  return st;
}

/// encode (precomputed) -> project -> greedy decode -> match.
inline PredictFn gmm_predictor(Pipeline& p, const Benchmark& bench, const ClassRegistry& registry) {
  const TokenSequence q = p.question_tokens();
  return [&p, &bench, &registry, q](std::size_t ref) {
    Tensor img = project(bench.test_feature(ref), p.projection);
    const std::string text = generate_text(p.decoder, p.vocab, img, q, p.max_new_tokens);
    Prediction pr = predict_detailed(text, registry);
    return Verdict{pr.class_id, pr.empty_generation};
  };
}

namespace detail {

inline AuditEntry audit_entry(std::size_t session, const Pipeline& p, bool decoder_checked) {
  return {session, p.encoder.frozen_checksum(), p.encoder.checksum(), decoder_checked,
          p.decoder.frozen_checksum(), p.decoder.checksum()};
}

inline void register_task(ClassRegistry& reg, const Task& task, const Dataset& train) {
  for (ClassId k : task.classes) reg.add(k, train.class_names[std::size_t(k)]);
}

inline std::vector<std::string> registry_names(const ClassRegistry& reg) {
  std::vector<std::string> out;
  for (const auto& e : reg.entries()) out.push_back(e.name);
  return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// The generative classifier over a full curriculum.
inline MethodResult run_gmm(Pipeline p, const Benchmark& bench, const Curriculum& c, const HarnessConfig& cfg) {
  p.encoder.verify_frozen();
  MethodResult res;
  res.method = "gmm";
  ClassRegistry reg;
  ExemplarStore store;
  std::set<ClassId> seen;
  for (std::size_t s = 0; s < c.tasks.size(); ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const Task& task = c.tasks[s];
    detail::register_task(reg, task, *bench.train);
    seen.insert(task.classes.begin(), task.classes.end());
    if (reg.size() != seen.size()) throw std::logic_error("run: registry size differs from seen classes");
    auto st = train_task(p, task, s, store, bench, cfg);
    update_exemplars(store, task, bench.train->labels, cfg.exemplars_per_class, cfg.seed);
    for (const auto& [k, refs] : store.per_class())
      if (refs.size() > cfg.exemplars_per_class) throw std::logic_error("run: exemplar budget exceeded");
    EvalRow row = evaluate(c, s, bench.test->labels, seen, gmm_predictor(p, bench, reg), cfg.eval_workers);
    res.matrix.add_row(row.per_task, row.overall);
    res.empty_generation += row.empty_generation;
    res.audit.push_back(detail::audit_entry(s, p, !cfg.train_decoder));
    res.steps_per_session.push_back(st.steps);
    res.wall_seconds.push_back(detail::seconds_since(t0));
  }
  res.exemplars = store.per_class();
  res.registry = detail::registry_names(reg);
  return res;
}

/// The pretrained pipeline evaluated with a growing registry and no training.
inline MethodResult run_zero_shot(Pipeline p, const Benchmark& bench, const Curriculum& c, const HarnessConfig& cfg) {
  p.encoder.verify_frozen();
  MethodResult res;
  res.method = "zero_shot";
  ClassRegistry reg;
  std::set<ClassId> seen;
  const std::uint64_t proj_sum = checksum(std::as_const(p.projection).parameters());
  for (std::size_t s = 0; s < c.tasks.size(); ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::register_task(reg, c.tasks[s], *bench.train);
    seen.insert(c.tasks[s].classes.begin(), c.tasks[s].classes.end());
    EvalRow row = evaluate(c, s, bench.test->labels, seen, gmm_predictor(p, bench, reg), cfg.eval_workers);
    res.matrix.add_row(row.per_task, row.overall);
    res.empty_generation += row.empty_generation;
    AuditEntry a = detail::audit_entry(s, p, true);
    if (checksum(std::as_const(p.projection).parameters()) != proj_sum) a.decoder_actual = ~a.decoder_expected;
    res.audit.push_back(a);
    res.steps_per_session.push_back(0);
    res.wall_seconds.push_back(detail::seconds_since(t0));
  }
  res.registry = detail::registry_names(reg);
  return res;
}

// ---------------------------------------------------------------------------
// Linear probe

/// Affine head over encoder features whose columns grow with each task; old
/// columns are preserved and new ones start at zero.
class LinearHead {
 public:
  explicit LinearHead(std::size_t feature_dim) : feature_dim_(feature_dim) {}

  void expand(const std::vector<ClassId>& classes) {
    const std::size_t old = columns_.size(), now = old + classes.size();
    Tensor w({feature_dim_, now}), b({1, now});
    for (std::size_t i = 0; i < feature_dim_; ++i)
      for (std::size_t j = 0; j < old; ++j) w.at(i, j) = weight_.value.at(i, j);
    for (std::size_t j = 0; j < old; ++j) b[j] = bias_.value[j];
    weight_ = Parameter("head.weight", std::move(w));
    bias_ = Parameter("head.bias", std::move(b));
    for (ClassId k : classes) {
      if (column_of_.contains(k)) throw std::logic_error("linear head: class added twice");
      column_of_[k] = columns_.size();
      columns_.push_back(k);
    }
  }

  std::size_t width() const { return columns_.size(); }
  const std::vector<ClassId>& columns() const { return columns_; }
  std::size_t column_of(ClassId k) const { return column_of_.at(k); }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }

  /// Argmax over all seen columns; ties go to the earliest column.
  ClassId predict(std::span<const double> f) const {
    if (columns_.empty()) throw std::logic_error("linear head: no classes");
    std::size_t best = 0;
    double best_v = 0.0;
    for (std::size_t j = 0; j < columns_.size(); ++j) {
      double v = bias_.value[j];
      for (std::size_t i = 0; i < feature_dim_; ++i) v += f[i] * weight_.value.at(i, j);
      if (j == 0 || v > best_v) {
        best = j;
        best_v = v;
      }
    }
    return columns_[best];
  }

 private:
  std::size_t feature_dim_;
  Parameter weight_, bias_;
  std::vector<ClassId> columns_;
  std::map<ClassId, std::size_t> column_of_;
};

/// Cross-entropy over all seen columns on task data plus stored exemplars.
inline std::size_t train_linear_head(LinearHead& head, const Task& task, std::size_t session,
                                     const ExemplarStore& store, const Benchmark& bench, const HarnessConfig& cfg) {
  std::vector<std::size_t> pool = task.train_refs;
  for (std::size_t r : store.refs()) pool.push_back(r);
  if (cfg.lp_epochs == 0 || pool.empty()) return 0;
  if (cfg.lp_batch_size == 0) throw std::invalid_argument("linear probe: batch size must be positive");
  const std::size_t per_epoch = (pool.size() + cfg.lp_batch_size - 1) / cfg.lp_batch_size;
  Optimizer opt(cfg.optimizer, OptimizerState(cfg.lp_lr, std::min(cfg.lr_min, cfg.lp_lr), std::int64_t(cfg.lp_epochs * per_epoch)));
  CounterRng rng{cfg.seed, 0x11e4, session};
  auto params = head.parameters();
  std::size_t steps = 0;
  for (std::size_t e = 0; e < cfg.lp_epochs; ++e) {
    shuffle_in_place(pool, rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * cfg.lp_batch_size, hi = std::min(pool.size(), lo + cfg.lp_batch_size);
      Tensor x({hi - lo, bench.train_features.cols()});
      std::vector<long> targets;
      for (std::size_t i = lo; i < hi; ++i) {
        auto f = bench.train_feature(pool[i]);
        std::copy(f.begin(), f.end(), x.data() + (i - lo) * f.size());
        targets.push_back(long(head.column_of(ClassId(bench.train->labels[pool[i]]))));
      }
      Graph g;
      Var logits = g.add_row(g.matmul(g.constant(std::move(x)), g.param(head.weight())), g.param(head.bias()));
      Var loss = g.cross_entropy(logits, targets, std::vector<double>(targets.size(), 1.0 / double(targets.size())));
      if (!std::isfinite(g.value(loss).item()))
        throw NumericsError("linear probe: non-finite loss at step " + std::to_string(steps));
      g.backward(loss);
      opt.step(params);
      ++steps;
    }
  }
  return steps;
}

inline MethodResult run_linear_probe(Pipeline p, const Benchmark& bench, const Curriculum& c, const HarnessConfig& cfg) {
  p.encoder.verify_frozen();
  MethodResult res;
  res.method = "linear_probe";
  LinearHead head(bench.train_features.cols());
  ExemplarStore store;
  std::set<ClassId> seen;
  for (std::size_t s = 0; s < c.tasks.size(); ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const Task& task = c.tasks[s];
    head.expand(task.classes);
    seen.insert(task.classes.begin(), task.classes.end());
    if (head.width() != seen.size()) throw std::logic_error("linear probe: head width differs from seen classes");
    const std::size_t steps = train_linear_head(head, task, s, store, bench, cfg);
    update_exemplars(store, task, bench.train->labels, cfg.lp_exemplars_per_class, cfg.seed);
    const LinearHead& h = head;
    PredictFn fn = [&h, &bench](std::size_t ref) { return Verdict{h.predict(bench.test_feature(ref)), false}; };
    EvalRow row = evaluate(c, s, bench.test->labels, seen, fn, cfg.eval_workers);
    res.matrix.add_row(row.per_task, row.overall);
    res.audit.push_back(detail::audit_entry(s, p, true));
    res.steps_per_session.push_back(steps);
    res.wall_seconds.push_back(detail::seconds_since(t0));
  }
  res.exemplars = store.per_class();
  for (ClassId k : head.columns()) res.registry.push_back(bench.train->class_names[std::size_t(k)]);
  return res;
}

// ---------------------------------------------------------------------------

enum class Method { kGmm, kLinearProbe, kZeroShot };

inline std::vector<Method> parse_methods(const std::string& s) {
  if (s == "all") return {Method::kGmm, Method::kLinearProbe, Method::kZeroShot};
  if (s == "gmm") return {Method::kGmm};
  if (s == "linear_probe") return {Method::kLinearProbe};
  if (s == "zero_shot") return {Method::kZeroShot};
  throw std::invalid_argument("method: unknown \"" + s + "\" (expected gmm, linear_probe, zero_shot or all)");
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kGmm: return "gmm";
    case Method::kLinearProbe: return "linear_probe";
    case Method::kZeroShot: return "zero_shot";
  }
  return {};
}

namespace detail {

/// Rethrows the in-flight exception with `prefix` prepended, keeping its type
/// so callers can still classify it.
[[noreturn]] inline void rethrow_with_context(const std::string& prefix) {
  try {
    throw;
  } catch (const FrozenParameterError& e) {
    throw FrozenParameterError(prefix + e.what());
  } catch (const GateError& e) {
    throw GateError(prefix + e.what());
  } catch (const NumericsError& e) {
    throw NumericsError(prefix + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(prefix + e.what());
  } catch (const std::logic_error& e) {
    throw std::logic_error(prefix + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(prefix + e.what());
  }
}

}  // namespace detail

struct ExperimentResult {
  Curriculum curriculum;
  std::vector<MethodResult> methods;
};

/// Builds the curriculum once and runs each method on it from the same
/// pretrained pipeline.
inline ExperimentResult run_experiment(const Pipeline& pretrained, const Benchmark& bench, const HarnessConfig& cfg,
                                       const std::vector<Method>& methods) {
  if (methods.empty()) throw std::invalid_argument("run: no methods selected");
  ExperimentResult out;
  out.curriculum = make_curriculum(bench.train->class_names.size(), cfg.scheme, cfg.seed);
  bind_examples(out.curriculum, bench.train->labels, bench.test->labels);
  for (Method m : methods) {
    try {
      switch (m) {
        case Method::kGmm: out.methods.push_back(run_gmm(pretrained, bench, out.curriculum, cfg)); break;
        case Method::kLinearProbe: out.methods.push_back(run_linear_probe(pretrained, bench, out.curriculum, cfg)); break;
        case Method::kZeroShot: out.methods.push_back(run_zero_shot(pretrained, bench, out.curriculum, cfg)); break;
      }
    } catch (...) {
      detail::rethrow_with_context(std::string("run[") + to_string(m) + "]: ");
    }
    if (!out.methods.back().audit_ok())
      throw FrozenParameterError("run[" + out.methods.back().method + "]: frozen-checksum audit failed");
  }
  return out;
}

}  // namespace gencil
