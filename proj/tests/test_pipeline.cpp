// tests/test_pipeline.cpp

// Copyright 2026  The cngop Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cngop/pipeline.hpp"

namespace cngop {
namespace {

namespace fs = std::filesystem;

const fs::path kDemo = CNGOP_DEMO_DIR;

struct Cli {
  int status = 0;
  std::string out;
  std::string err;
};

Cli Cngop(std::vector<std::string> args) {
  args.insert(args.begin(), "cngop");
  std::vector<const char *> argv;
  for (const std::string &a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Cli r;
  r.status = RunSubcommand(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string Slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Pipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cngop_pipeline_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string P(const std::string &name) const { return (dir_ / name).string(); }
  std::string Config() const { return (kDemo / "config.json").string(); }

  /// Runs every stage one at a time through the command line.
  void RunStages(const std::string &jobs) {
    const std::string cfg = Config();
    auto ok = [](const Cli &r) { ASSERT_EQ(r.status, 0) << r.err; };
    ok(Cngop({"normalize", "--config", cfg, "--jobs", jobs, "--in", (kDemo / "nbest.jsonl").string(),
            "--out", P("normalized.jsonl")}));
    ok(Cngop({"build-cn", "--config", cfg, "--jobs", jobs, "--in", P("normalized.jsonl"), "--out",
            P("cn.jsonl")}));
    ok(Cngop({"align", "--config", cfg, "--jobs", jobs, "--cn", P("cn.jsonl"), "--nbest",
            P("normalized.jsonl"), "--ref", (kDemo / "refs.jsonl").string(), "--out",
            P("align.jsonl")}));
    ok(Cngop({"stats-fit", "--config", cfg, "--align", P("align.jsonl"), "--out", P("stats.json")}));
    ok(Cngop({"features", "--config", cfg, "--jobs", jobs, "--cn", P("cn.jsonl"), "--align",
            P("align.jsonl"), "--stats", P("stats.json"), "--out", P("features.jsonl")}));
    ok(Cngop({"decode-wer", "--config", cfg, "--cn", P("cn.jsonl"), "--nbest", P("normalized.jsonl"),
            "--ref", (kDemo / "refs.jsonl").string(), "--out", P("decode_wer.json")}));
    ok(Cngop({"frame-gop", "--posteriors", (kDemo / "posteriors.txt").string(), "--segments",
            (kDemo / "segments.txt").string(), "--out", P("frame_gop.json")}));
    ok(Cngop({"score", "--config", cfg, "--jobs", jobs, "--features", P("features.jsonl"), "--frames",
            (kDemo / "frames.jsonl").string(), "--save-weights", P("weights.json"), "--out",
            P("scores.jsonl")}));
  }

  fs::path dir_;
};

TEST_F(Pipeline, ConfigRejectsUnknownKeys) {
  std::ofstream(P("bad.json")) << R"({"lexicon": "x.tsv", "colour": 1})";
  try {
    LoadPipelineConfig(P("bad.json"));
    FAIL();
  } catch (const Error &e) {
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
  EXPECT_THROW(LoadPipelineConfig(P("missing.json")), Error);
  std::ofstream(P("nolex.json")) << R"({"lexicon": "absent.tsv"})";
  EXPECT_THROW(LoadPipelineConfig(P("nolex.json")), Error);
  std::ofstream(P("classes.json")) << R"({"class_values": [0, 1]})";
  EXPECT_THROW(LoadPipelineConfig(P("classes.json")), Error);
}

TEST_F(Pipeline, ConfigResolvesRelativePaths) {
  const PipelineConfig c = LoadPipelineConfig(Config());
  EXPECT_EQ(fs::path(c.lexicon), (kDemo / "lexicon.tsv").lexically_normal());
  EXPECT_TRUE(c.use_priors);
  EXPECT_EQ(c.model.d_model, 8);
}

TEST_F(Pipeline, EmptyInputFailsCleanly) {
  std::ofstream(P("empty.jsonl")).flush();
  const Cli r = Cngop({"normalize", "--config", Config(), "--in", P("empty.jsonl"), "--out",
                     P("out.jsonl")});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("no hypotheses"), std::string::npos) << r.err;
}

TEST_F(Pipeline, UsageErrors) {
  EXPECT_NE(Cngop({"transmogrify"}).status, 0);
  EXPECT_NE(Cngop({}).status, 0);
  EXPECT_NE(Cngop({"normalize", "--config", Config(), "--in", (kDemo / "nbest.jsonl").string()}).status, 0);
  EXPECT_NE(Cngop({"normalize", "--config", Config(), "--bogus"}).status, 0);
  const Cli r = Cngop({"features", "--config", Config(), "--cn", (kDemo / "nbest.jsonl").string(),
                     "--align", (kDemo / "nbest.jsonl").string(), "--out", P("f.jsonl")});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("stats"), std::string::npos) << r.err;
}

TEST_F(Pipeline, StagesMatchTheDemo) {
  RunStages("1");
  ASSERT_EQ(Cngop({"demo", "--out", P("demo")}).status, 0);
  for (const char *name : {"normalized.jsonl", "cn.jsonl", "align.jsonl", "stats.json",
                           "features.jsonl", "decode_wer.json", "frame_gop.json", "weights.json",
                           "scores.jsonl"})
    EXPECT_EQ(Slurp(P(name)), Slurp(dir_ / "demo" / name)) << name;
}

TEST_F(Pipeline, JobsDoNotChangeOutputs) {
  RunStages("1");
  ASSERT_EQ(Cngop({"demo", "--jobs", "2", "--out", P("j2")}).status, 0);
  for (const char *name : {"normalized.jsonl", "cn.jsonl", "align.jsonl", "features.jsonl",
                           "scores.jsonl"})
    EXPECT_EQ(Slurp(P(name)), Slurp(dir_ / "j2" / name)) << name;
}

TEST_F(Pipeline, DurationFeatureIsStandardized) {
  RunStages("1");
  const auto [inventory, fms] = ReadFeatures(P("features.jsonl"));
  EXPECT_FALSE(inventory.empty());
  double n = 0, s = 0, ss = 0;
  for (const FeatureMatrix &fm : fms)
    for (const FeatureRow &r : fm.rows) {
      n += 1;
      s += r.word_nd;
      ss += r.word_nd * r.word_nd;
    }
  ASSERT_GT(n, 0);
  const double mean = s / n;
  EXPECT_NEAR(mean, 0.0, 1e-9);
  EXPECT_NEAR(std::sqrt(ss / n - mean * mean), 1.0, 1e-9);
}

TEST_F(Pipeline, ConfusionNetworkDecodingBeatsOneBest) {
  RunStages("1");
  std::ifstream in(P("decode_wer.json"));
  const nlohmann::json j = nlohmann::json::parse(in);
  EXPECT_LT(j["cn_decode"]["errors"].get<int>(), j["one_best"]["errors"].get<int>());
  EXPECT_EQ(j["one_best"]["ref_length"], j["cn_decode"]["ref_length"]);
}

TEST_F(Pipeline, ScoresAreDistributions) {
  RunStages("1");
  const PipelineConfig c = LoadPipelineConfig(Config());
  for (const nlohmann::json &rec : ReadJsonLines(P("scores.jsonl"))) {
    const auto probs = rec["class_probs"].get<std::vector<double>>();
    ASSERT_EQ(probs.size(), c.class_values.size());
    double s = 0;
    for (double p : probs) s += p;
    EXPECT_NEAR(s, 1.0, 1e-9);
    const double e = rec["expected_score"].get<double>();
    EXPECT_GE(e, c.class_values.front());
    EXPECT_LE(e, c.class_values.back());
  }
  // Reloading the saved weights reproduces the scores.
  ASSERT_EQ(Cngop({"score", "--config", Config(), "--features", P("features.jsonl"), "--frames",
                 (kDemo / "frames.jsonl").string(), "--weights", P("weights.json"), "--out",
                 P("again.jsonl")})
                .status,
            0);
  EXPECT_EQ(Slurp(P("again.jsonl")), Slurp(P("scores.jsonl")));
}

TEST_F(Pipeline, DemoIsDeterministic) {
  const Cli a = Cngop({"demo", "--out", P("a")});
  const Cli b = Cngop({"demo", "--out", P("b")});
  ASSERT_EQ(a.status, 0) << a.err;
  ASSERT_EQ(b.status, 0) << b.err;
  EXPECT_NE(a.out.find("cn-decode"), std::string::npos);
  for (const auto &entry : fs::directory_iterator(dir_ / "a"))
    EXPECT_EQ(Slurp(entry.path()), Slurp(dir_ / "b" / entry.path().filename()))
        << entry.path().filename();
}

TEST(ParallelFor, RethrowsFirstFailure) {
  std::vector<int> seen(50, 0);
  ParallelFor(seen.size(), 3, [&](std::size_t i) { seen[i] = 1; });
  EXPECT_EQ(std::count(seen.begin(), seen.end(), 1), 50);
  try {
    ParallelFor(10, 4, [](std::size_t i) {
      if (i == 3 || i == 7) throw Error("item " + std::to_string(i));
    });
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(std::string(e.what()), "item 3");
  }
}

TEST(WarningLog, CollapsesDuplicates) {
  WarningLog log;
  log.Add({"b", "a", "b"});
  std::ostringstream os;
  log.Flush(os);
  EXPECT_EQ(os.str(), "WARNING: a\nWARNING: b (x2)\n");
}

}  // namespace
}  // namespace cngop
