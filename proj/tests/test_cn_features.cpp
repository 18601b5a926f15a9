// tests/test_cn_features.cpp

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
#include <random>

#include "cngop/cn_features.hpp"
#include "oracles.hpp"

namespace cngop {
namespace {

using Tokens = std::vector<std::string>;

ConfusionNetwork Cn(const std::vector<std::map<std::string, double>> &slots,
                    CnLevel level = CnLevel::kPhoneme) {
  ConfusionNetwork cn{"u", level, {}, {}};
  for (const auto &s : slots) cn.slots.push_back({s});
  return cn;
}

using K = AlignKind;

TEST(AlignCnToCanonical, Identity) {
  auto a = AlignCnToCanonical(Cn({{{"K", 1}}, {{"AE", 1}}, {{"T", 1}}}), {"K", "AE", "T"});
  EXPECT_EQ(a.ops, (std::vector<AlignOp>{{K::kMatch, 0, 0}, {K::kMatch, 1, 1}, {K::kMatch, 2, 2}}));
  EXPECT_DOUBLE_EQ(a.cost, 0.0);
}

TEST(AlignCnToCanonical, DeletesMissingPhone) {
  auto a = AlignCnToCanonical(Cn({{{"K", 1}}, {{"T", 1}}}), {"K", "AE", "T"});
  EXPECT_EQ(a.ops, (std::vector<AlignOp>{
                       {K::kMatch, 0, 0}, {K::kDeleteCanonical, -1, 1}, {K::kMatch, 1, 2}}));
  EXPECT_DOUBLE_EQ(a.cost, 0.95);
}

TEST(AlignCnToCanonical, InsertsEpsHeavySlot) {
  ConfusionNetwork cn = Cn({{{kEps, 0.9}, {"B", 0.1}}, {{"K", 1}}});
  auto a = AlignCnToCanonical(cn, {"K"});
  EXPECT_EQ(a.ops, (std::vector<AlignOp>{{K::kInsertSlot, 0, -1}, {K::kMatch, 1, 0}}));
  oracle::Best b = oracle::BruteForceCanonical(cn, {"K"}, 0.95);
  EXPECT_NEAR(a.cost, b.cost, 1e-12);
  EXPECT_EQ(a.ops, b.ops);
}

TEST(AlignCnToCanonical, Errors) {
  EXPECT_THROW(AlignCnToCanonical(Cn({{{"K", 1}}}), {}), Error);
  const std::set<std::string> inv{"K", "SIL"};
  EXPECT_THROW(AlignCnToCanonical(Cn({{{"K", 1}}}), {"ZZ"}, 0.95, &inv), Error);
  EXPECT_NO_THROW(AlignCnToCanonical(Cn({}), {"K"}, 0.95, &inv));
}

TEST(AlignCnToCanonical, EmptyNetworkDeletesEverything) {
  auto a = AlignCnToCanonical(Cn({}), {"K", "AE"});
  EXPECT_EQ(a.ops, (std::vector<AlignOp>{{K::kDeleteCanonical, -1, 0}, {K::kDeleteCanonical, -1, 1}}));
}

ConfusionNetwork RandomCn(std::mt19937_64 &rng, const Tokens &alphabet, int max_slots) {
  std::uniform_int_distribution<int> ns(0, max_slots), nsym(1, 3);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size());
  std::uniform_real_distribution<double> u(0.01, 1.0);
  ConfusionNetwork cn{"u", CnLevel::kPhoneme, {}, {}};
  for (int s = ns(rng); s > 0; --s) {
    ConfusionSlot slot;
    double total = 0.0;
    for (int k = nsym(rng); k > 0; --k) {
      const std::size_t i = pick(rng);
      const std::string &sym = i == alphabet.size() ? kEps : alphabet[i];
      total += (slot.probs[sym] += u(rng));
    }
    for (auto &[_, p] : slot.probs) p /= total;
    cn.slots.push_back(std::move(slot));
  }
  return cn;
}

TEST(AlignProperty, MatchesEnumeration) {
  std::mt19937_64 rng(31);
  const Tokens alphabet{"A", "B", "C"};
  std::uniform_int_distribution<int> nc(1, 5), sym(0, 2);
  for (int trial = 0; trial < 1500; ++trial) {
    ConfusionNetwork cn = RandomCn(rng, alphabet, 5);
    Tokens canon;
    for (int k = nc(rng); k > 0; --k) canon.push_back(alphabet[sym(rng)]);
    CanonicalAlignment a = AlignCnToCanonical(cn, canon);
    ValidateAlignment(a, cn.slots.size(), canon.size());
    oracle::Best b = oracle::BruteForceCanonical(cn, canon, 0.95);
    EXPECT_NEAR(a.cost, b.cost, 1e-9);
    EXPECT_NEAR(oracle::ScriptCost(cn, canon, a.ops, 0.95), a.cost, 1e-9);
  }
}

const Tokens kInventory{"AA", "AE", "K", "SIL", "T"};

std::size_t Index(const std::string &p) {
  return static_cast<std::size_t>(std::find(kInventory.begin(), kInventory.end(), p) -
                                  kInventory.begin());
}

TEST(ComputeCnFeatures, MatchedSlot) {
  ConfusionNetwork cn = Cn({{{"AE", 0.7}, {"AA", 0.2}, {kEps, 0.1}}});
  auto f = ComputeCnFeatures(cn, {"AE"}, AlignCnToCanonical(cn, {"AE"}), kInventory);
  EXPECT_NEAR(f[0].cn_gop, std::log(0.7), 1e-15);
  EXPECT_NEAR(f[0].cn_gop, -0.3567, 1e-4);
  EXPECT_EQ(f[0].cn_gop_margin, 0.0);
  EXPECT_EQ(f[0].lpp[Index("K")], kDefaultLogFloor);

  f = ComputeCnFeatures(cn, {"AA"}, AlignCnToCanonical(cn, {"AA"}), kInventory);
  EXPECT_NEAR(f[0].cn_gop, -1.6094, 1e-4);
  EXPECT_NEAR(f[0].cn_gop_margin, std::log(0.2) - std::log(0.7), 1e-15);
  EXPECT_NEAR(f[0].cn_gop_margin, -1.2528, 1e-4);
  EXPECT_EQ(f[0].lpr[Index("AA")], 0.0);
  EXPECT_NEAR(f[0].lpr[Index("AE")], std::log(0.2) - std::log(0.7), 1e-15);
}

TEST(ComputeCnFeatures, DeletionPutsMassOnSilence) {
  ConfusionNetwork cn = Cn({});
  auto f = ComputeCnFeatures(cn, {"AE"}, AlignCnToCanonical(cn, {"AE"}), kInventory);
  EXPECT_EQ(f[0].cn_gop, -20.0);
  EXPECT_EQ(f[0].lpp[Index("SIL")], 0.0);
  EXPECT_EQ(f[0].cn_gop_margin, -20.0);
  EXPECT_EQ(f[0].lpr[Index("SIL")], -20.0);
}

TEST(ComputeCnFeatures, TinyProbabilitiesAreFloored) {
  ConfusionNetwork cn = Cn({{{"AE", 1.0 - 1e-12}, {"T", 1e-12}}});
  auto f = ComputeCnFeatures(cn, {"T"}, {{{K::kMatch, 0, 0}}, 0.0}, kInventory, -20.0);
  EXPECT_EQ(f[0].cn_gop, -20.0);
  EXPECT_EQ(FlooredLog(0.0, -7.0), -7.0);
  EXPECT_EQ(FlooredLog(1.0, -7.0), 0.0);
}

TEST(FeatureProperty, Identities) {
  std::mt19937_64 rng(32);
  const Tokens alphabet{"AA", "AE", "K", "T"};
  std::uniform_int_distribution<int> nc(1, 6), sym(0, 3);
  for (int trial = 0; trial < 2000; ++trial) {
    ConfusionNetwork cn = RandomCn(rng, alphabet, 6);
    Tokens canon;
    for (int k = nc(rng); k > 0; --k) canon.push_back(alphabet[sym(rng)]);
    CanonicalAlignment a = AlignCnToCanonical(cn, canon);
    auto feats = ComputeCnFeatures(cn, canon, a, kInventory);
    for (const AlignOp &op : a.ops) {
      if (op.kind == K::kInsertSlot) continue;
      const PhoneFeatures &f = feats[op.canon];
      const std::size_t ref = Index(canon[op.canon]);
      EXPECT_LE(f.cn_gop_margin, 0.0);
      EXPECT_EQ(f.lpr[ref], 0.0);
      const double mx = *std::max_element(f.lpp.begin(), f.lpp.end());
      EXPECT_EQ(f.cn_gop_margin == 0.0, f.lpp[ref] == mx);
      for (double v : f.lpp) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_LE(v, 0.0);
      }
      for (double v : f.lpr) EXPECT_TRUE(std::isfinite(v));
      if (op.kind == K::kDeleteCanonical) {
        EXPECT_EQ(f.lpp[Index("SIL")], 0.0);
        EXPECT_EQ(f.cn_gop, kDefaultLogFloor);
      }
    }
  }
}

TEST(DurationStats, Fit) {
  std::vector<double> d{1, 2, 3};
  DurationStats s = FitDurationStats(d);
  EXPECT_DOUBLE_EQ(s.mu, 2.0);
  EXPECT_NEAR(s.sigma, std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(s.sigma, 0.8165, 1e-4);
  std::vector<double> same{5, 5, 5}, two{2, 4}, one{3};
  EXPECT_THROW(FitDurationStats(same), Error);
  EXPECT_THROW(FitDurationStats(one), Error);
  s = FitDurationStats(two);
  EXPECT_DOUBLE_EQ(s.mu, 3.0);
  EXPECT_DOUBLE_EQ(s.sigma, 1.0);
  DurationStats back = StatsFromJson(nlohmann::json::parse(ToJson(s).dump()));
  EXPECT_EQ(back.mu, s.mu);
  EXPECT_EQ(back.count, 2);
}

TEST(WordSrNd, Examples) {
  const DurationStats stats{8.0, 2.0, 10};
  auto r = WordSrNd({{"a", 10, 20}, {"b", 7, 7}, {"c", 0, 8}}, stats);
  EXPECT_DOUBLE_EQ(r[0].sr, 0.1);
  EXPECT_DOUBLE_EQ(r[0].nd, 1.0);
  EXPECT_DOUBLE_EQ(r[1].sr, 1.0);
  EXPECT_DOUBLE_EQ(r[2].nd, 0.0);
}

TEST(BroadcastWordFeatures, Examples) {
  const DurationStats stats{8.0, 2.0, 10};
  const std::vector<CanonicalWord> canon{{"the", {"DH", "AH"}}, {"cat", {"K", "AE", "T"}}};
  std::vector<WordTiming> hyp{{"cat", 0, 10}};
  auto a = AlignCnToCanonical(OneHotCn("u", hyp), CanonicalWords(canon));
  auto cols = BroadcastWordFeatures(canon, hyp, a, stats);
  ASSERT_EQ(cols.size(), 5u);
  // "the" is deleted: sr 0, nd of a zero-length word.
  EXPECT_EQ(cols[0].sr, 0.0);
  EXPECT_EQ(cols[0].nd, -4.0);
  EXPECT_FALSE(cols[1].span);
  for (int i = 2; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(cols[i].sr, 0.1);
    EXPECT_EQ(cols[i].word_index, 1);
    EXPECT_EQ(cols[i].span, std::make_pair(int64_t{0}, int64_t{10}));
  }
  std::set<double> distinct;
  for (const auto &c : cols) distinct.insert(c.sr);
  EXPECT_EQ(distinct.size(), 2u);
}

TEST(ComputeCnWgop, Examples) {
  ConfusionNetwork w = Cn({{{"cat", 0.8}, {"cap", 0.2}}}, CnLevel::kWord);
  auto g = ComputeCnWgop(w, {"cat"});
  EXPECT_NEAR(g[0].cn_wgop, std::log(0.8), 1e-15);
  EXPECT_EQ(g[0].cn_wgop_margin, 0.0);

  g = ComputeCnWgop(Cn({}, CnLevel::kWord), {"cat"});
  EXPECT_EQ(g[0].cn_wgop, -20.0);

  // Canonical word absent from a matched slot.
  ConfusionNetwork other = Cn({{{"dog", 0.6}, {"cap", 0.4}}}, CnLevel::kWord);
  g = ComputeCnWgop(other, {"cat"}, {{{K::kMatch, 0, 0}}, 0.0});
  EXPECT_EQ(g[0].cn_wgop, -20.0);
  EXPECT_NEAR(g[0].cn_wgop_margin, -20.0 - std::log(0.6), 1e-12);
}

TEST(ExtractFeatures, DeterministicSerialization) {
  const std::vector<CanonicalWord> canon{{"cat", {"K", "AE", "T"}}};
  ConfusionNetwork word = Cn({{{"cat", 0.75}, {kEps, 0.25}}}, CnLevel::kWord);
  ConfusionNetwork phone = Cn({{{"K", 0.75}, {kEps, 0.25}}, {{"AA", 0.5}, {"AE", 0.25}, {kEps, 0.25}},
                               {{"T", 0.75}, {kEps, 0.25}}});
  phone.word_spans = {0, 0, 0};
  std::vector<WordTiming> timed{{"cat", 3, 12}};
  auto pa = AlignCnToCanonical(phone, CanonicalPhones(canon));
  auto wa = AlignCnToCanonical(word, CanonicalWords(canon));
  auto ta = AlignCnToCanonical(OneHotCn("u", timed), CanonicalWords(canon));
  UtteranceInputs in{&word, &phone, &canon, &pa, &wa, &timed, &ta};
  const DurationStats stats{6.0, 3.0, 4};
  FeatureMatrix fm = ExtractFeatures(in, kInventory, stats);
  ASSERT_EQ(fm.rows.size(), 3u);
  EXPECT_NEAR(fm.rows[1].cn_gop_margin, std::log(0.25) - std::log(0.5), 1e-15);
  EXPECT_DOUBLE_EQ(fm.rows[0].word_nd, 1.0);
  EXPECT_NEAR(*fm.rows[2].cn_wgop, std::log(0.75), 1e-15);
  const std::string once = ToJson(fm).dump();
  EXPECT_EQ(ToJson(ExtractFeatures(in, kInventory, stats)).dump(), once);
  FeatureMatrix back = FeaturesFromJson(nlohmann::json::parse(once));
  EXPECT_EQ(ToJson(back).dump(), once);
  EXPECT_EQ(back.words[0].span, std::make_pair(int64_t{3}, int64_t{12}));
}

TEST(AlignmentJson, RoundTrip) {
  ConfusionNetwork cn = Cn({{{kEps, 0.9}, {"B", 0.1}}, {{"K", 1}}});
  auto a = AlignCnToCanonical(cn, {"K", "T"});
  auto back = AlignmentFromJson(nlohmann::json::parse(ToJson(a).dump()));
  EXPECT_EQ(back.ops, a.ops);
  EXPECT_EQ(back.cost, a.cost);
}

}  // namespace
}  // namespace cngop
