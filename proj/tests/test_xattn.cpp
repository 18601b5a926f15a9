// tests/test_xattn.cpp

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

#include <algorithm>
#include <cmath>
#include <random>

#include "cngop/xattn.hpp"

namespace cngop {
namespace {

Matrix RandomMatrix(std::mt19937_64 &rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (double &v : m.reshaped()) v = g(rng);
  return m;
}

ModelConfig SmallConfig(uint64_t seed = 5) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_decoder_layers = 1;
  c.n_encoder_layers = 2;
  c.n_classes = 5;
  c.phoneme_feat_dim = 3;
  c.frame_feat_dim = 4;
  c.seed = seed;
  return c;
}

TEST(Forward, HandOracleOnePhonemeOneFrame) {
  ModelConfig c;
  c.d_model = 2;
  c.n_heads = 1;
  c.n_decoder_layers = 1;
  c.n_encoder_layers = 0;
  c.n_classes = 3;
  c.phoneme_feat_dim = 2;
  c.frame_feat_dim = 2;
  Weights w(c);
  for (const char *name : {"phone_proj.W", "frame_proj.W", "dec0.attn.q.W", "dec0.attn.k.W",
                           "dec0.attn.v.W", "dec0.attn.o.W", "head.l1.W"})
    w.Mutable(name) = Matrix::Identity(2, 2);
  auto ff1 = w.Mutable("dec0.ff.l1.W");
  ff1(0, 0) = ff1(1, 1) = ff1(0, 2) = ff1(1, 3) = 1.0;
  auto ff2 = w.Mutable("dec0.ff.l2.W");
  ff2(0, 0) = ff2(1, 1) = 0.5;
  ff2(2, 1) = ff2(3, 0) = -0.25;
  w.Mutable("pool.w") << 1.0, -1.0;
  w.Mutable("head.l2.W") << 1.0, 0.0, -1.0, 0.0, 1.0, 1.0;
  w.Mutable("head.l2.b") << 0.1, 0.0, -0.1;

  Matrix phone(1, 2), frame(1, 2);
  phone << 0.3, -0.2;
  frame << 1.0, 0.5;
  ScoreDistribution d = Forward(w, phone, frame, AttentionMask::Full(1, 1));
  // tests/fixtures/forward_oracle.py
  const std::vector<double> want{0.3671654011109255, 0.3322249935333472, 0.3006096053557273};
  ASSERT_EQ(d.probs.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(d.probs[k], want[k], 1e-12);
}

TEST(Forward, OutputIsADistribution) {
  std::mt19937_64 rng(51);
  Weights w = InitWeights(SmallConfig());
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> n(1, 7), t(1, 12);
    const int rows = n(rng), cols = t(rng);
    ScoreDistribution d = Forward(w, RandomMatrix(rng, rows, 3), RandomMatrix(rng, cols, 4),
                                  AttentionMask::Full(rows, cols));
    double s = 0.0;
    for (double p : d.probs) {
      EXPECT_GE(p, 0.0);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    const double e = ExpectedScore(d, {1, 2, 3, 4, 5});
    EXPECT_GE(e, 1.0);
    EXPECT_LE(e, 5.0);
  }
}

TEST(Forward, ShapeErrors) {
  Weights w = InitWeights(SmallConfig());
  std::mt19937_64 rng(52);
  EXPECT_THROW(Forward(w, RandomMatrix(rng, 2, 2), RandomMatrix(rng, 3, 4), AttentionMask::Full(2, 3)),
               Error);
  EXPECT_THROW(Forward(w, RandomMatrix(rng, 2, 3), RandomMatrix(rng, 3, 4), AttentionMask::Full(2, 4)),
               Error);
  AttentionMask empty_row = AttentionMask::Full(2, 3);
  std::fill_n(empty_row.allowed.begin(), 3, 0);
  EXPECT_THROW(Forward(w, RandomMatrix(rng, 2, 3), RandomMatrix(rng, 3, 4), empty_row), Error);
}

TEST(BuildWordMask, Examples) {
  AttentionMask m = BuildWordMask({0}, {std::make_pair(int64_t{5}, int64_t{9})}, 20,
                                  MaskMode::kRestricted);
  for (int t = 0; t < 20; ++t) EXPECT_EQ(m.Allowed(0, t), t >= 5 && t <= 9) << t;

  AttentionMask full = BuildWordMask({0, 0}, {std::make_pair(int64_t{5}, int64_t{9})}, 20,
                                     MaskMode::kFull);
  EXPECT_TRUE(std::all_of(full.allowed.begin(), full.allowed.end(), [](auto v) { return v; }));

  AttentionMask same = BuildWordMask({0, 0, 1}, {std::make_pair(int64_t{2}, int64_t{4}), std::nullopt},
                                     8, MaskMode::kRestricted);
  for (int t = 0; t < 8; ++t) {
    EXPECT_EQ(same.Allowed(0, t), same.Allowed(1, t));
    EXPECT_TRUE(same.Allowed(2, t));  // no span: unrestricted
  }
  EXPECT_THROW(BuildWordMask({0}, {std::make_pair(int64_t{5}, int64_t{20})}, 20, MaskMode::kRestricted),
               Error);
  EXPECT_THROW(BuildWordMask({1}, {std::make_pair(int64_t{0}, int64_t{1})}, 20, MaskMode::kRestricted),
               Error);
}

struct LocalityCase {
  Matrix phones;
  Matrix frames;
  AttentionMask mask;
  std::vector<int> word_of;
  std::vector<std::pair<int, int>> spans;
};

LocalityCase MakeLocalityCase(std::mt19937_64 &rng) {
  LocalityCase c;
  c.spans = {{2, 5}, {6, 6}, {9, 13}};
  c.word_of = {0, 0, 1, 2, 2, 2};
  c.phones = RandomMatrix(rng, 6, 3);
  c.frames = RandomMatrix(rng, 16, 4);
  std::vector<FrameSpan> spans;
  for (auto [a, b] : c.spans) spans.push_back(std::make_pair(int64_t{a}, int64_t{b}));
  c.mask = BuildWordMask(c.word_of, spans, 16, MaskMode::kRestricted);
  return c;
}

TEST(MaskLocality, AttentionRowsAreDistributionsOverAllowedFrames) {
  std::mt19937_64 rng(53);
  Weights w = InitWeights(SmallConfig());
  LocalityCase c = MakeLocalityCase(rng);
  ForwardTrace trace;
  Forward(w, c.phones, c.frames, c.mask, &trace);
  for (const Matrix &head : trace.cross_attention.at(0)) {
    for (int i = 0; i < 6; ++i) {
      double s = 0.0;
      for (int t = 0; t < 16; ++t) {
        if (!c.mask.Allowed(i, t)) EXPECT_EQ(head(i, t), 0.0);
        s += head(i, t);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(MaskLocality, RowsIgnoreFramesOutsideTheirWord) {
  std::mt19937_64 rng(54);
  Weights w = InitWeights(SmallConfig());
  LocalityCase c = MakeLocalityCase(rng);
  ForwardTrace base;
  Forward(w, c.phones, c.frames, c.mask, &base);
  for (int i = 0; i < 6; ++i) {
    Matrix frames = c.frames;
    const auto [a, b] = c.spans[c.word_of[i]];
    for (int t = 0; t < 16; ++t)
      if (t < a || t > b) frames.row(t) = RandomMatrix(rng, 1, 4) * 100.0;
    ForwardTrace pert;
    Forward(w, c.phones, frames, c.mask, &pert);
    EXPECT_LE((pert.decoder_output.row(i) - base.decoder_output.row(i)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MaskLocality, OutputIgnoresFramesOutsideEveryWord) {
  std::mt19937_64 rng(55);
  Weights w = InitWeights(SmallConfig());
  LocalityCase c = MakeLocalityCase(rng);
  const ScoreDistribution base = Forward(w, c.phones, c.frames, c.mask);
  Matrix frames = c.frames;
  for (int t : {0, 1, 7, 8, 14, 15}) frames.row(t) = RandomMatrix(rng, 1, 4) * 1e3;
  const ScoreDistribution pert = Forward(w, c.phones, frames, c.mask);
  for (std::size_t k = 0; k < base.probs.size(); ++k)
    EXPECT_LE(std::abs(pert.probs[k] - base.probs[k]), 1e-12);
  // Full attention does see them.
  const AttentionMask full = AttentionMask::Full(6, 16);
  EXPECT_GT(std::abs(Forward(w, c.phones, frames, full).probs[0] -
                     Forward(w, c.phones, c.frames, full).probs[0]),
            1e-9);
}

TEST(MaskLocality, PermutingFramesInsideAWindow) {
  std::mt19937_64 rng(56);
  Weights w = InitWeights(SmallConfig());
  LocalityCase c = MakeLocalityCase(rng);
  ForwardTrace base, perm;
  Forward(w, c.phones, c.frames, c.mask, &base);
  Matrix frames = c.frames;
  frames.row(9).swap(frames.row(13));
  frames.row(10).swap(frames.row(12));
  Forward(w, c.phones, frames, c.mask, &perm);
  for (int i = 3; i < 6; ++i)
    EXPECT_LE((perm.decoder_output.row(i) - base.decoder_output.row(i)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ExpectedScore, Examples) {
  EXPECT_NEAR(ExpectedScore({std::vector<double>(11, 1.0 / 11)},
                            {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}),
              5.0, 1e-12);
  std::vector<double> onehot(11, 0.0);
  onehot[7] = 1.0;
  EXPECT_EQ(ExpectedScore({onehot}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}), 7.0);
  EXPECT_EQ(ExpectedScore({{0.5, 0.5}}, {1, 5}), 3.0);
  EXPECT_THROW(ExpectedScore({{0.5, 0.5}}, {1}), Error);
}

TEST(RoundedPccMse, Examples) {
  ScoreMetrics m = RoundedPccMse({1.2, 3.9, 7.0}, {1.2, 3.9, 7.0});
  ASSERT_TRUE(m.pcc);
  EXPECT_NEAR(*m.pcc, 1.0, 1e-15);
  EXPECT_EQ(m.mse, 0.0);
  m = RoundedPccMse({2.4, 4.4}, {2.6, 4.6});  // rounds to [2, 4] vs [3, 5]
  EXPECT_EQ(m.mse, 1.0);
  EXPECT_NEAR(*m.pcc, 1.0, 1e-15);
  m = RoundedPccMse({0, 1, 2}, {2, 1, 0});
  EXPECT_NEAR(*m.pcc, -1.0, 1e-15);
  m = RoundedPccMse({2.5, -2.5, 0.49}, {3, -3, 0});  // half away from zero
  EXPECT_EQ(m.mse, 0.0);
  m = RoundedPccMse({3.1, 2.9}, {1, 5});  // constant after rounding
  EXPECT_FALSE(m.pcc);
  EXPECT_EQ(m.mse, 4.0);
  EXPECT_THROW(RoundedPccMse({1}, {1}), Error);
}

TEST(InitWeights, DeterministicAndBounded) {
  Weights a = InitWeights(SmallConfig(9)), b = InitWeights(SmallConfig(9)),
          c = InitWeights(SmallConfig(10));
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  EXPECT_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
  EXPECT_EQ(XavierBound(3, 3), 1.0);
  for (const Weights::Tensor &t : a.tensors()) {
    auto m = a.Get(t.name);
    if (t.kind == Weights::Kind::kBias) EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0) << t.name;
    if (t.kind == Weights::Kind::kGain) EXPECT_EQ(m.minCoeff(), 1.0) << t.name;
    if (t.kind == Weights::Kind::kWeight)
      EXPECT_LE(m.cwiseAbs().maxCoeff(), XavierBound(t.rows, t.cols)) << t.name;
  }
}

TEST(Weights, JsonRoundTrip) {
  Weights a = InitWeights(SmallConfig(3));
  Weights b = WeightsFromJson(nlohmann::json::parse(ToJson(a).dump()));
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  nlohmann::json j = ToJson(a);
  j["tensors"].erase(0);
  EXPECT_THROW(WeightsFromJson(j), Error);
  ModelConfig bad = SmallConfig();
  bad.n_heads = 3;
  EXPECT_THROW(InitWeights(bad), Error);
}

TEST(NumericalGradient, Examples) {
  std::vector<double> w{3.0};
  auto g = NumericalGradient([](std::span<const double> p) { return p[0] * p[0]; }, w);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
  EXPECT_EQ(w[0], 3.0);
  g = NumericalGradient([](std::span<const double>) { return 4.0; }, w);
  EXPECT_EQ(g[0], 0.0);
  w = {0.0};
  g = NumericalGradient([](std::span<const double> p) { return std::abs(p[0]); }, w);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_THROW(NumericalGradient([](std::span<const double>) { return NAN; }, w), Error);
}

TEST(TrainNumerical, LossDecreases) {
  ModelConfig c = SmallConfig(4);
  c.d_model = 4;
  c.n_heads = 1;
  c.n_encoder_layers = 0;
  c.n_classes = 2;
  c.phoneme_feat_dim = 1;
  c.frame_feat_dim = 1;
  Weights w = InitWeights(c);
  std::vector<TrainingExample> data;
  for (int k = 0; k < 4; ++k) {
    Matrix p = Matrix::Constant(1, 1, 1.0), f = Matrix::Constant(2, 1, k % 2 ? 1.0 : -1.0);
    data.push_back({p, f, AttentionMask::Full(1, 2), k % 2});
  }
  auto history = TrainNumerical(&w, data, 10, 0.5);
  ASSERT_EQ(history.size(), 11u);
  EXPECT_LT(history.back(), history.front());
}

}  // namespace
}  // namespace cngop
