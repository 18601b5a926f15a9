// cngop/confusion_network.hpp

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

// Confusion networks built from N-best lists by posterior-weighted
// progressive alignment.
//
// Hypotheses are merged one at a time, most probable first. Each merge is a
// minimum-cost monotone alignment of the new sequence against the current
// slots with three moves:
//
//   match   symbol joins slot; cost 0 if the slot already holds the symbol,
//           else 1 (substitution)
//   skip    slot receives no symbol; the sequence's weight goes to EPS;
//           cost 1 - P_slot(EPS)
//   insert  symbol opens a new slot; everything merged so far is EPS there;
//           cost 1
//
// Ties resolve leftmost-first with preference match > skip > insert.
//
// Phoneme networks are built hierarchically: every word slot expands into
// its pronunciation variants (weight P(word) * prior, plus the slot's EPS
// mass as an empty sequence), those are merged by the same procedure, and
// the per-word runs are concatenated.

#pragma once

#include <json.hpp>

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "cngop/common.hpp"
#include "cngop/lexicon.hpp"
#include "cngop/nbest.hpp"

namespace cngop {

enum class CnLevel { kWord, kPhoneme };

inline const char *CnLevelName(CnLevel level) {
  return level == CnLevel::kWord ? "word" : "phoneme";
}

/// Categorical distribution over symbols plus kEps.
struct ConfusionSlot {
  std::map<std::string, double> probs;

  double Prob(const std::string &symbol) const {
    auto it = probs.find(symbol);
    return it == probs.end() ? 0.0 : it->second;
  }

  double Total() const {
    double t = 0.0;
    for (const auto &[_, p] : probs) t += p;
    return t;
  }
};

struct ConfusionNetwork {
  std::string utt_id;
  CnLevel level = CnLevel::kWord;
  std::vector<ConfusionSlot> slots;
  /// Phoneme level only: originating word slot of every phoneme slot.
  std::vector<int> word_spans;
};

struct WeightedSequence {
  std::vector<std::string> symbols;
  double weight = 0.0;
};

enum class MergeOp { kMatch, kSkip, kInsert };

struct MergeStep {
  MergeOp op;
  int slot;    // existing slot index, -1 for kInsert
  int symbol;  // sequence position, -1 for kSkip
};

struct MergePlan {
  std::vector<MergeStep> steps;
  double cost = 0.0;
};

/// Costs within this distance are ties.
inline constexpr double kTieTolerance = 1e-12;

/// Accumulates weighted sequences into slots of unnormalized mass. Every slot
/// always holds exactly the total merged weight.
class CnAccumulator {
 public:
  double total_mass() const { return total_; }
  std::size_t num_slots() const { return mass_.size(); }
  const std::map<std::string, double> &slot_mass(std::size_t i) const {
    return mass_[i];
  }

  double SlotProb(std::size_t slot, const std::string &symbol) const {
    auto it = mass_[slot].find(symbol);
    return it == mass_[slot].end() ? 0.0 : it->second / total_;
  }

  double MatchCost(std::size_t slot, const std::string &symbol) const {
    auto it = mass_[slot].find(symbol);
    return it != mass_[slot].end() && it->second > 0 ? 0.0 : 1.0;
  }

  double SkipCost(std::size_t slot) const { return 1.0 - SlotProb(slot, kEps); }

  static constexpr double InsertCost() { return 1.0; }

  MergePlan Plan(const std::vector<std::string> &symbols) const {
    const std::size_t m = mass_.size(), n = symbols.size();
    // suffix[i][j]: cheapest alignment of slots i.. with symbols j..
    std::vector<std::vector<double>> suffix(m + 1, std::vector<double>(n + 1, 0.0));
    for (std::size_t j = n; j-- > 0;) suffix[m][j] = suffix[m][j + 1] + InsertCost();
    for (std::size_t i = m; i-- > 0;) {
      const double skip = SkipCost(i);
      suffix[i][n] = suffix[i + 1][n] + skip;
      for (std::size_t j = n; j-- > 0;) {
        suffix[i][j] = std::min({MatchCost(i, symbols[j]) + suffix[i + 1][j + 1],
                                 skip + suffix[i + 1][j],
                                 InsertCost() + suffix[i][j + 1]});
      }
    }
    MergePlan plan;
    plan.cost = suffix[0][0];
    std::size_t i = 0, j = 0;
    while (i < m || j < n) {
      const double here = suffix[i][j] + kTieTolerance;
      if (i < m && j < n && MatchCost(i, symbols[j]) + suffix[i + 1][j + 1] <= here) {
        plan.steps.push_back({MergeOp::kMatch, static_cast<int>(i++), static_cast<int>(j++)});
      } else if (i < m && SkipCost(i) + suffix[i + 1][j] <= here) {
        plan.steps.push_back({MergeOp::kSkip, static_cast<int>(i++), -1});
      } else {
        plan.steps.push_back({MergeOp::kInsert, -1, static_cast<int>(j++)});
      }
    }
    return plan;
  }

  void Apply(const WeightedSequence &seq, const MergePlan &plan) {
    std::vector<std::map<std::string, double>> next;
    next.reserve(mass_.size() + seq.symbols.size());
    for (const MergeStep &step : plan.steps) {
      switch (step.op) {
        case MergeOp::kMatch:
          next.push_back(std::move(mass_[step.slot]));
          next.back()[seq.symbols[step.symbol]] += seq.weight;
          break;
        case MergeOp::kSkip:
          next.push_back(std::move(mass_[step.slot]));
          next.back()[kEps] += seq.weight;
          break;
        case MergeOp::kInsert: {
          std::map<std::string, double> slot;
          if (total_ > 0) slot[kEps] = total_;
          slot[seq.symbols[step.symbol]] += seq.weight;
          next.push_back(std::move(slot));
          break;
        }
      }
    }
    mass_ = std::move(next);
    total_ += seq.weight;
  }

  /// Zero-weight sequences carry no information and are ignored.
  void Merge(const WeightedSequence &seq) {
    if (!(seq.weight > 0)) return;
    Apply(seq, Plan(seq.symbols));
  }

  /// Normalized slots; zero-mass entries are dropped.
  std::vector<ConfusionSlot> Finish() const {
    std::vector<ConfusionSlot> out;
    out.reserve(mass_.size());
    for (const auto &slot : mass_) {
      double sum = 0.0;
      for (const auto &[_, v] : slot) sum += v;
      ConfusionSlot cs;
      for (const auto &[sym, v] : slot)
        if (v > 0) cs.probs[sym] = v / sum;
      out.push_back(std::move(cs));
    }
    return out;
  }

 private:
  std::vector<std::map<std::string, double>> mass_;
  double total_ = 0.0;
};

/// Merges sequences in descending weight order, ties in input order.
inline std::vector<ConfusionSlot> MergeSequences(std::vector<WeightedSequence> seqs) {
  std::stable_sort(seqs.begin(), seqs.end(),
                   [](const WeightedSequence &a, const WeightedSequence &b) {
                     return a.weight > b.weight;
                   });
  CnAccumulator acc;
  for (const WeightedSequence &s : seqs) acc.Merge(s);
  return acc.Finish();
}

inline ConfusionNetwork BuildWordCn(const NBestList &nbest) {
  if (nbest.hyps.empty()) throw Error(nbest.utt_id + ": empty N-best list");
  std::vector<const Hypothesis *> order;
  for (const Hypothesis &h : nbest.hyps) order.push_back(&h);
  std::stable_sort(order.begin(), order.end(),
                   [](const Hypothesis *a, const Hypothesis *b) {
                     if (a->posterior != b->posterior) return a->posterior > b->posterior;
                     return a->rank < b->rank;
                   });
  std::vector<WeightedSequence> seqs;
  for (const Hypothesis *h : order) seqs.push_back({h->tokens, h->posterior});
  return {nbest.utt_id, CnLevel::kWord, MergeSequences(std::move(seqs)), {}};
}

/// Sequences competing inside one word slot.
inline std::vector<WeightedSequence> SlotPronunciations(const ConfusionSlot &slot,
                                                        const Lexicon &lex,
                                                        OovPolicy policy,
                                                        Warnings *warnings) {
  std::vector<std::pair<std::string, double>> words;
  double eps = 0.0;
  for (const auto &[sym, p] : slot.probs) {
    if (sym == kEps)
      eps += p;
    else if (p > 0)
      words.emplace_back(sym, p);
  }
  std::stable_sort(words.begin(), words.end(),
                   [](const auto &a, const auto &b) { return a.second > b.second; });
  std::vector<WeightedSequence> seqs;
  for (const auto &[word, p] : words) {
    std::span<const PronEntry> prons = lex.Lookup(word);
    if (prons.empty()) {
      if (policy == OovPolicy::kError) throw Error("out-of-vocabulary word: " + word);
      Warn(warnings, "skipping out-of-vocabulary word: " + word);
      eps += p;
      continue;
    }
    for (const PronEntry &pron : prons) seqs.push_back({pron.phones, p * pron.prior});
  }
  if (eps > 0) seqs.push_back({{}, eps});
  return seqs;
}

inline ConfusionNetwork ExpandToPhonemeCn(const ConfusionNetwork &word_cn,
                                          const Lexicon &lex,
                                          OovPolicy policy = OovPolicy::kError,
                                          Warnings *warnings = nullptr) {
  if (word_cn.level != CnLevel::kWord)
    throw Error(word_cn.utt_id + ": expected a word-level confusion network");
  ConfusionNetwork out{word_cn.utt_id, CnLevel::kPhoneme, {}, {}};
  for (std::size_t w = 0; w < word_cn.slots.size(); ++w) {
    for (ConfusionSlot &s :
         MergeSequences(SlotPronunciations(word_cn.slots[w], lex, policy, warnings))) {
      out.slots.push_back(std::move(s));
      out.word_spans.push_back(static_cast<int>(w));
    }
  }
  return out;
}

/// Per-slot argmax (ties to the lexicographically smallest symbol); EPS
/// winners produce no output.
inline std::vector<std::string> CnDecode(const ConfusionNetwork &cn) {
  std::vector<std::string> out;
  for (const ConfusionSlot &slot : cn.slots) {
    const std::string *best = nullptr;
    double best_p = -1.0;
    for (const auto &[sym, p] : slot.probs) {
      if (p > best_p) {
        best = &sym;
        best_p = p;
      }
    }
    if (best != nullptr && *best != kEps) out.push_back(*best);
  }
  return out;
}

/// Per-slot sums within 1e-9; throws otherwise.
inline void ValidateCn(const ConfusionNetwork &cn, double tol = 1e-9) {
  for (std::size_t i = 0; i < cn.slots.size(); ++i) {
    for (const auto &[sym, p] : cn.slots[i].probs)
      if (!(p >= 0) || !std::isfinite(p))
        throw Error(cn.utt_id + ": slot " + std::to_string(i) +
                    " has an invalid probability for '" + sym + "'");
    if (std::abs(cn.slots[i].Total() - 1.0) > tol)
      throw Error(cn.utt_id + ": slot " + std::to_string(i) + " does not sum to 1");
  }
  if (cn.level == CnLevel::kPhoneme) {
    if (cn.word_spans.size() != cn.slots.size())
      throw Error(cn.utt_id + ": word_spans length mismatch");
    for (std::size_t i = 1; i < cn.word_spans.size(); ++i)
      if (cn.word_spans[i] < cn.word_spans[i - 1])
        throw Error(cn.utt_id + ": word_spans not monotone");
  }
}

inline nlohmann::json ToJson(const ConfusionNetwork &cn) {
  nlohmann::json slots = nlohmann::json::array();
  for (const ConfusionSlot &s : cn.slots) {
    nlohmann::json js = nlohmann::json::array();
    for (const auto &[sym, p] : s.probs) js.push_back({{"symbol", sym}, {"prob", p}});
    slots.push_back(std::move(js));
  }
  return {{"utt_id", cn.utt_id},
          {"level", CnLevelName(cn.level)},
          {"slots", slots},
          {"word_spans", cn.word_spans}};
}

inline ConfusionNetwork CnFromJson(const nlohmann::json &j) {
  ConfusionNetwork cn;
  try {
    cn.utt_id = j.at("utt_id").get<std::string>();
    const std::string level = j.at("level").get<std::string>();
    if (level == "word")
      cn.level = CnLevel::kWord;
    else if (level == "phoneme")
      cn.level = CnLevel::kPhoneme;
    else
      throw Error("unknown confusion network level: " + level);
    for (const auto &js : j.at("slots")) {
      ConfusionSlot slot;
      for (const auto &e : js)
        slot.probs[e.at("symbol").get<std::string>()] += e.at("prob").get<double>();
      cn.slots.push_back(std::move(slot));
    }
    if (j.contains("word_spans")) cn.word_spans = j["word_spans"].get<std::vector<int>>();
  } catch (const nlohmann::json::exception &e) {
    throw Error(std::string("malformed confusion network record: ") + e.what());
  }
  ValidateCn(cn);
  return cn;
}

}  // namespace cngop
