// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gencil/cli.hpp"

using namespace gencil;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() / "gencil_tests" /
               (std::string(info->test_suite_name()) + "." + info->name());
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gencil");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::uint8_t> bytes(const fs::path& p) { return read_file_bytes(p.string()); }

std::string text(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

// A config small enough to pretrain in a few seconds.
std::vector<std::string> small(const fs::path& out) {
  return {"--out", out.string(), "--num-classes", "8", "--train-per-class", "30", "--test-per-class", "10",
          "--pretrain-per-class", "40", "--model-dim", "32", "--decoder-ff-dim", "64", "--decoder-steps", "300",
          "--scheme", "b0(2)", "--base-epochs", "1", "--incr-epochs", "1", "--lp-epochs", "20"};
}

std::vector<std::string> with(std::string cmd, std::vector<std::string> rest) {
  rest.insert(rest.begin(), std::move(cmd));
  return rest;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  Config c;
  EXPECT_EQ(parse_config(render_config(c)), c);
  EXPECT_EQ(parse_config(render_config(c, true)), c);
}

TEST(Config, RandomizedRoundTrip) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    CounterRng rng{seed, 0xc0f};
    Config c;
    c.set_seed(rng());
    c.harness.base_lr = rng.uniform() * 1e-3;
    c.harness.replay_fraction = rng.uniform() * 0.9;
    c.harness.train_decoder = rng.below(2) == 1;
    c.harness.scheme = rng.below(2) ? Scheme::bb(1 + rng.below(9), 1 + rng.below(4)) : Scheme::fscil(3, 1, 2, 4);
    c.pipeline.question = "what kind of thing";
    c.data.noise = rng.uniform();
    c.out_dir = "o" + std::to_string(rng.below(1000));
    EXPECT_EQ(parse_config(render_config(c)), c) << render_config(c);
  }
}

TEST(Config, EveryKeyIsDocumentedAndUnique) {
  std::set<std::string> names;
  for (const auto& k : config_keys()) {
    EXPECT_FALSE(k.doc.empty()) << k.name;
    EXPECT_TRUE(names.insert(k.name).second) << k.name;
  }
  for (const char* required : {"scheme", "seed", "base_epochs", "incr_epochs", "base_lr", "incr_lr", "lr_min",
                               "exemplars_per_class", "image_tokens", "model_dim", "question", "train_decoder",
                               "out_dir"})
    EXPECT_TRUE(names.contains(required)) << required;
}

TEST(Config, ParsesCommentsAndWhitespace) {
  auto c = parse_config("# header\n  base_epochs = 5   # inline\n\nquestion = what is shown\nscheme= bb(10, 2)\n");
  EXPECT_EQ(c.harness.base_epochs, 5u);
  EXPECT_EQ(c.pipeline.question, "what is shown");
  EXPECT_EQ(c.harness.scheme, Scheme::bb(10, 2));
}

TEST(Config, RejectsUnknownDuplicateAndMalformed) {
  EXPECT_THROW(parse_config("epochs = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("seed 1\n"), ConfigError);
  EXPECT_THROW(parse_config("base_lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("train_decoder = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("scheme = b3(1)\n"), ConfigError);
  EXPECT_THROW(parse_config("method = icarl\n"), ConfigError);
  try {
    parse_config("seed = 1\n\nbogus = 2\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Config, SeedFeedsEveryStage) {
  Config c = parse_config("seed = 42\n");
  EXPECT_EQ(c.harness.seed, 42u);
  EXPECT_EQ(c.pipeline.seed, 42u);
  EXPECT_EQ(c.data.seed, 42u);
}

TEST(Cli, OverridesApplyInOrder) {
  const auto dir = scratch_dir();
  std::ofstream(dir / "c.conf") << "base_epochs = 3\nseed = 5\n";
  auto r = cli({"run", "--config", (dir / "c.conf").string(), "--base-epochs", "7", "--lr_min=0.5", "--seed", "9",
                "--out", "elsewhere", "--print-config"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto c = parse_config(r.out);
  EXPECT_EQ(c.harness.base_epochs, 7u);
  EXPECT_EQ(c.harness.lr_min, 0.5);
  EXPECT_EQ(c.seed(), 9u);
  EXPECT_EQ(c.out_dir, "elsewhere");
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"run", "--no-such-key", "1"}).code, 2);
  EXPECT_EQ(cli({"run", "--seed"}).code, 2);
  EXPECT_EQ(cli({"run", "--config", "/nonexistent/gencil.conf"}).code, 2);
}

TEST(Checkpoint, RejectsCorruption) {
  std::vector<CheckpointSection> s{{"meta", {'{', '}'}}, {"tensor:x", {1, 2, 3}}};
  auto b = encode_checkpoint(s);
  auto d = decode_checkpoint(b);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[1].payload, s[1].payload);

  auto bad = b;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = b;
  bad[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = b;
  bad.back() ^= 1;
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum mismatch in section tensor:x"), std::string::npos);
  }
  bad = b;
  bad.pop_back();
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = b;
  bad.push_back(0);
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
}

TEST(Results, ReportGroupsSchemesAndRejectsBadInput) {
  Json a = {{"schema_version", kResultsSchemaVersion},
            {"scheme", "b0(4)"},
            {"methods", Json::array({Json{{"method", "gmm"}, {"avg", 50.0}, {"last", 30.25}, {"pd", 12.0}}})}};
  Json b = a;
  b["scheme"] = "fscil(12,2,5,3)";
  b["methods"].push_back(Json{{"method", "zero_shot"}, {"avg", 10.0}, {"last", 5.0}, {"pd", 3.13}});
  auto one = build_report({{"a", a}});
  EXPECT_EQ(one.rows.size(), 1u);
  auto two = build_report({{"a", a}, {"b", b}});
  EXPECT_EQ(two.schemes, (std::vector<std::string>{"b0(4)", "fscil(12,2,5,3)"}));
  EXPECT_EQ(two.rows, (std::vector<std::string>{"gmm", "zero_shot"}));
  const auto csv = report_csv(two);
  EXPECT_NE(csv.find("\"gmm\",50.00,30.25,12.00,50.00,30.25,12.00"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\"zero_shot\",,,,10.00,5.00,3.13"), std::string::npos) << csv;

  try {
    parse_results_text("{\"schema_version\": 1,\n  \"scheme\": }", "broken.json");
    FAIL();
  } catch (const ReportError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_results_text("{\"schema_version\": 99}", "x"), ReportError);
}

TEST(Results, StripWallTimesIsRecursive) {
  Json j = {{"a", 1}, {"wall_seconds_total", 2.0}, {"m", Json::array({Json{{"wall_seconds", {1, 2}}, {"b", 3}}})}};
  EXPECT_EQ(strip_wall_times(j), (Json{{"a", 1}, {"m", Json::array({Json{{"b", 3}}})}}));
}

TEST(CliData, GenDataIsStableAndSeeded) {
  const auto dir = scratch_dir();
  auto a = cli({"gen-data", "--out", (dir / "a").string()});
  auto b = cli({"gen-data", "--out", (dir / "b").string()});
  auto c = cli({"gen-data", "--out", (dir / "c").string(), "--seed", "2"});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(c.code, 0) << c.err;
  for (const char* f : {"pretrain.gcil", "train.gcil", "test.gcil"}) {
    EXPECT_EQ(bytes(dir / "a" / f), bytes(dir / "b" / f)) << f;
    EXPECT_NE(bytes(dir / "a" / f), bytes(dir / "c" / f)) << f;
  }
  EXPECT_NE(a.out.find("checksum"), std::string::npos);
}

TEST(CliData, CapacityOverflowExitsTwo) {
  const auto dir = scratch_dir();
  auto r = cli({"gen-data", "--out", dir.string(), "--num-classes", "22", "--pretrain-classes", "4"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("capacity"), std::string::npos) << r.err;
}

TEST(CliData, MissingDatasetExitsTwo) {
  const auto dir = scratch_dir();
  auto r = cli({"pretrain", "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("dataset not found: " + (dir / "pretrain.gcil").string()), std::string::npos) << r.err;
}

TEST(CliData, MissingCheckpointExitsTwo) {
  const auto dir = scratch_dir();
  ASSERT_EQ(cli(with("gen-data", small(dir))).code, 0);
  auto r = cli(with("run", small(dir)));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("checkpoint not found"), std::string::npos) << r.err;
}

TEST(CliData, UnmetGateExitsThree) {
  const auto dir = scratch_dir();
  ASSERT_EQ(cli(with("gen-data", small(dir))).code, 0);
  auto args = with("pretrain", small(dir));
  args.insert(args.end(), {"--encoder-gate", "1.01", "--encoder-steps", "10"});
  auto r = cli(args);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("pretrain budget exhausted"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "checkpoint.gckp"));
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "gencil_tests" / "CliPipeline";
    fs::remove_all(dir_);
    ASSERT_EQ(cli(with("gen-data", small(dir_))).code, 0);
    auto r = cli(with("pretrain", small(dir_)));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static inline fs::path dir_;
};

TEST_F(CliPipeline, CheckpointVerifiesOnLoad) {
  auto ck = read_checkpoint((dir_ / "checkpoint.gckp").string());
  EXPECT_TRUE(ck.pipeline.encoder.frozen());
  EXPECT_TRUE(ck.pipeline.decoder.frozen());
  EXPECT_NO_THROW(ck.pipeline.encoder.verify_frozen());
  EXPECT_EQ(ck.benchmark_classes.size(), 8u);
  EXPECT_EQ(pipeline_to_checkpoint(ck), bytes(dir_ / "checkpoint.gckp"));
}

TEST_F(CliPipeline, PretrainRerunIsByteIdentical) {
  const auto dir = scratch_dir();
  auto args = with("pretrain", small(dir_));
  args.insert(args.end(), {"--checkpoint", (dir / "again.gckp").string()});
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_EQ(bytes(dir / "again.gckp"), bytes(dir_ / "checkpoint.gckp"));
}

TEST_F(CliPipeline, RunIsDeterministicAndRecomputable) {
  const auto dir = scratch_dir();
  auto args = with("run", small(dir_));
  auto a = cli(args);
  ASSERT_EQ(a.code, 0) << a.err;
  const auto ja = Json::parse(text(dir_ / "results.json"));
  args.insert(args.end(), {"--eval-workers", "3"});
  auto b = cli(args);
  ASSERT_EQ(b.code, 0) << b.err;
  auto jb = Json::parse(text(dir_ / "results.json"));
  // Worker count is echoed in the config but changes nothing else.
  jb["config"]["eval_workers"] = ja["config"]["eval_workers"];
  EXPECT_EQ(strip_wall_times(ja).dump(), strip_wall_times(jb).dump());

  ASSERT_EQ(ja["methods"].size(), 3u);
  for (const auto& m : ja["methods"]) {
    EXPECT_TRUE(m["audit_ok"].get<bool>());
    std::vector<double> seen;
    for (std::size_t i = 0; i < m["correct_counts"].size(); ++i) {
      double c = 0, n = 0;
      for (std::size_t j = 0; j < m["correct_counts"][i].size(); ++j) {
        c += m["correct_counts"][i][j].get<double>();
        n += ja["curriculum"][j]["test_examples"].get<double>();
      }
      seen.push_back(100.0 * c / n);
      EXPECT_NEAR(m["seen_overall"][i].get<double>(), round2(seen.back()), 1e-9);
    }
    EXPECT_NEAR(m["avg"].get<double>(), round2(metric_avg(seen)), 1e-9);
    EXPECT_NEAR(m["last"].get<double>(), round2(seen.back()), 1e-9);
    EXPECT_NEAR(m["pd"].get<double>(), round2(seen.front() - seen.back()), 1e-9);
  }
  EXPECT_EQ(ja["config"]["scheme"], "b0(2)");
  EXPECT_TRUE(fs::exists(dir_ / "sessions.dat"));
}

TEST_F(CliPipeline, RunTwiceIsByteIdenticalMinusWallTimes) {
  auto args = with("run", small(dir_));
  args.insert(args.end(), {"--method", "gmm"});
  ASSERT_EQ(cli(args).code, 0);
  const auto a = Json::parse(text(dir_ / "results.json"));
  ASSERT_EQ(cli(args).code, 0);
  const auto b = Json::parse(text(dir_ / "results.json"));
  EXPECT_EQ(strip_wall_times(a).dump(1), strip_wall_times(b).dump(1));
}

TEST_F(CliPipeline, FewShotSchemeOnEighteenClasses) {
  const auto dir = scratch_dir();
  auto base = small(dir);
  base[3] = "18";
  base[17] = "fscil(12,2,5,3)";
  ASSERT_EQ(cli(with("gen-data", base)).code, 0);
  ASSERT_EQ(cli(with("pretrain", base)).code, 0);
  auto r = cli(with("run", base));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = Json::parse(text(dir / "results.json"));
  ASSERT_EQ(j["curriculum"].size(), 4u);
  EXPECT_EQ(j["curriculum"][0]["classes"].size(), 12u);
  for (std::size_t s = 1; s < 4; ++s) {
    EXPECT_EQ(j["curriculum"][s]["shots"], 5);
    EXPECT_EQ(j["curriculum"][s]["train_examples"], 10);
  }
  for (const auto& m : j["methods"]) {
    EXPECT_EQ(m["seen_overall"].size(), 4u);
    EXPECT_TRUE(m.contains("pd"));
  }
}

TEST_F(CliPipeline, ReportOverRunOutput) {
  const auto dir = scratch_dir();
  auto args = with("run", small(dir_));
  ASSERT_EQ(cli(args).code, 0);
  auto r = cli({"report", (dir_ / "results.json").string(), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("linear_probe"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "report.csv"));
  std::ofstream(dir / "bad.json") << "{\"schema_version\": 1,";
  auto bad = cli({"report", (dir / "bad.json").string(), "--out", dir.string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("malformed JSON"), std::string::npos) << bad.err;
}
