// cngop/cn_features.hpp

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

// Pronunciation features read off a confusion network aligned to the
// canonical transcript, plus word-level speaking rate and normalized
// duration from word timings.
//
// Per canonical position i with slot probabilities P:
//   cn_gop        = log P(ref_i)
//   cn_gop_margin = log P(ref_i) - max_p log P(p)
//   lpp[p]        = log P(p)
//   lpr[p]        = log P(ref_i) - log P(p)
// A matched slot supplies P (absent symbols have probability 0). A deleted
// canonical position puts all mass on silence. Inserted slots contribute
// nothing. Logs are floored at log_floor before any differencing.

#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cngop/common.hpp"
#include "cngop/confusion_network.hpp"
#include "cngop/nbest.hpp"

namespace cngop {

inline constexpr double kDefaultLogFloor = -20.0;
inline constexpr double kDefaultDeletionCost = 0.95;

enum class AlignKind { kMatch, kDeleteCanonical, kInsertSlot };

struct AlignOp {
  AlignKind kind;
  int slot;   // -1 for kDeleteCanonical
  int canon;  // -1 for kInsertSlot

  bool operator==(const AlignOp &) const = default;
};

struct CanonicalAlignment {
  std::vector<AlignOp> ops;
  double cost = 0.0;
};

inline double CanonMatchCost(const ConfusionSlot &slot, const std::string &symbol) {
  return 1.0 - slot.Prob(symbol);
}

inline double CanonInsertCost(const ConfusionSlot &slot) {
  return 1.0 - slot.Prob(kEps);
}

/// Minimum edit-distance alignment of CN slots to canonical symbols.
/// Costs: match 1 - P_slot(symbol), delete canonical `deletion_cost`, insert
/// slot 1 - P_slot(EPS). Ties go leftmost-first, match > delete > insert.
/// With an inventory, canonical symbols outside it are rejected.
inline CanonicalAlignment AlignCnToCanonical(
    const ConfusionNetwork &cn, const std::vector<std::string> &canonical,
    double deletion_cost = kDefaultDeletionCost,
    const std::set<std::string> *inventory = nullptr) {
  if (canonical.empty()) throw Error(cn.utt_id + ": empty canonical sequence");
  if (inventory != nullptr)
    for (const std::string &p : canonical)
      if (!inventory->count(p))
        throw Error(cn.utt_id + ": canonical symbol '" + p + "' not in inventory");

  const std::size_t m = cn.slots.size(), n = canonical.size();
  std::vector<std::vector<double>> suffix(m + 1, std::vector<double>(n + 1, 0.0));
  for (std::size_t j = n; j-- > 0;) suffix[m][j] = suffix[m][j + 1] + deletion_cost;
  for (std::size_t i = m; i-- > 0;) {
    const double ins = CanonInsertCost(cn.slots[i]);
    suffix[i][n] = suffix[i + 1][n] + ins;
    for (std::size_t j = n; j-- > 0;)
      suffix[i][j] =
          std::min({CanonMatchCost(cn.slots[i], canonical[j]) + suffix[i + 1][j + 1],
                    deletion_cost + suffix[i][j + 1], ins + suffix[i + 1][j]});
  }

  CanonicalAlignment out;
  out.cost = suffix[0][0];
  std::size_t i = 0, j = 0;
  while (i < m || j < n) {
    const double here = suffix[i][j] + kTieTolerance;
    if (i < m && j < n &&
        CanonMatchCost(cn.slots[i], canonical[j]) + suffix[i + 1][j + 1] <= here) {
      out.ops.push_back({AlignKind::kMatch, static_cast<int>(i++), static_cast<int>(j++)});
    } else if (j < n && deletion_cost + suffix[i][j + 1] <= here) {
      out.ops.push_back({AlignKind::kDeleteCanonical, -1, static_cast<int>(j++)});
    } else {
      out.ops.push_back({AlignKind::kInsertSlot, static_cast<int>(i++), -1});
    }
  }
  return out;
}

/// Checks the alignment covers every slot and canonical index exactly once,
/// in increasing order.
inline void ValidateAlignment(const CanonicalAlignment &a, std::size_t num_slots,
                              std::size_t num_canonical) {
  int next_slot = 0, next_canon = 0;
  for (const AlignOp &op : a.ops) {
    if (op.kind != AlignKind::kDeleteCanonical) {
      if (op.slot != next_slot) throw Error("alignment skips or repeats a slot");
      ++next_slot;
    }
    if (op.kind != AlignKind::kInsertSlot) {
      if (op.canon != next_canon)
        throw Error("alignment skips or repeats a canonical position");
      ++next_canon;
    }
  }
  if (next_slot != static_cast<int>(num_slots) ||
      next_canon != static_cast<int>(num_canonical))
    throw Error("alignment does not cover the network and canonical sequence");
}

inline double FlooredLog(double p, double log_floor) {
  return p > 0 ? std::max(std::log(p), log_floor) : log_floor;
}

struct PhoneFeatures {
  double cn_gop = 0.0;
  double cn_gop_margin = 0.0;
  std::vector<double> lpp;  // over the inventory, in inventory order
  std::vector<double> lpr;
};

/// Features for every canonical phoneme. `inventory` fixes the LPP/LPR
/// column order and must contain kSil and every canonical symbol.
inline std::vector<PhoneFeatures> ComputeCnFeatures(
    const ConfusionNetwork &cn, const std::vector<std::string> &canonical,
    const CanonicalAlignment &alignment, const std::vector<std::string> &inventory,
    double log_floor = kDefaultLogFloor) {
  ValidateAlignment(alignment, cn.slots.size(), canonical.size());
  auto index_of = [&](const std::string &sym) -> std::size_t {
    auto it = std::find(inventory.begin(), inventory.end(), sym);
    if (it == inventory.end()) throw Error("symbol '" + sym + "' not in inventory");
    return static_cast<std::size_t>(it - inventory.begin());
  };
  const std::size_t sil = index_of(kSil);

  std::vector<PhoneFeatures> out(canonical.size());
  for (const AlignOp &op : alignment.ops) {
    if (op.kind == AlignKind::kInsertSlot) continue;
    PhoneFeatures &f = out[op.canon];
    f.lpp.assign(inventory.size(), log_floor);
    if (op.kind == AlignKind::kMatch) {
      const ConfusionSlot &slot = cn.slots[op.slot];
      for (std::size_t k = 0; k < inventory.size(); ++k)
        f.lpp[k] = FlooredLog(slot.Prob(inventory[k]), log_floor);
    } else {
      f.lpp[sil] = 0.0;
    }
    const std::size_t ref = index_of(canonical[op.canon]);
    f.cn_gop = f.lpp[ref];
    f.cn_gop_margin = f.cn_gop - *std::max_element(f.lpp.begin(), f.lpp.end());
    f.lpr.resize(inventory.size());
    for (std::size_t k = 0; k < inventory.size(); ++k) f.lpr[k] = f.cn_gop - f.lpp[k];
  }
  return out;
}

struct WordGop {
  double cn_wgop = 0.0;
  double cn_wgop_margin = 0.0;
};

/// Word-level analogue over a word CN aligned to the canonical words. The
/// maximum runs over the slot's words (EPS excluded); a deleted word has all
/// mass on silence, so its margin is log_floor - 0.
inline std::vector<WordGop> ComputeCnWgop(const ConfusionNetwork &word_cn,
                                          const std::vector<std::string> &canonical_words,
                                          const CanonicalAlignment &alignment,
                                          double log_floor = kDefaultLogFloor) {
  ValidateAlignment(alignment, word_cn.slots.size(), canonical_words.size());
  std::vector<WordGop> out(canonical_words.size());
  for (const AlignOp &op : alignment.ops) {
    if (op.kind == AlignKind::kInsertSlot) continue;
    WordGop &g = out[op.canon];
    if (op.kind == AlignKind::kDeleteCanonical) {
      g.cn_wgop = log_floor;
      g.cn_wgop_margin = log_floor;
      continue;
    }
    const ConfusionSlot &slot = word_cn.slots[op.slot];
    double best = log_floor;
    for (const auto &[sym, p] : slot.probs)
      if (sym != kEps) best = std::max(best, FlooredLog(p, log_floor));
    g.cn_wgop = FlooredLog(slot.Prob(canonical_words[op.canon]), log_floor);
    g.cn_wgop_margin = g.cn_wgop - best;
  }
  return out;
}

inline std::vector<WordGop> ComputeCnWgop(const ConfusionNetwork &word_cn,
                                          const std::vector<std::string> &canonical_words,
                                          double log_floor = kDefaultLogFloor,
                                          double deletion_cost = kDefaultDeletionCost) {
  return ComputeCnWgop(word_cn, canonical_words,
                       AlignCnToCanonical(word_cn, canonical_words, deletion_cost),
                       log_floor);
}

/// Mean and population standard deviation of durations in frames.
struct DurationStats {
  double mu = 0.0;
  double sigma = 1.0;
  int64_t count = 0;
};

inline DurationStats FitDurationStats(std::span<const double> durations) {
  if (durations.size() < 2) throw Error("duration stats need at least 2 durations");
  double sum = 0.0;
  for (double d : durations) sum += d;
  const double mu = sum / static_cast<double>(durations.size());
  double ss = 0.0;
  for (double d : durations) ss += (d - mu) * (d - mu);
  const double sigma = std::sqrt(ss / static_cast<double>(durations.size()));
  if (!(sigma > 0)) throw Error("duration stats: all durations are equal (sigma 0)");
  return {mu, sigma, static_cast<int64_t>(durations.size())};
}

inline nlohmann::json ToJson(const DurationStats &s) {
  return {{"mu", s.mu}, {"sigma", s.sigma}, {"count", s.count}};
}

inline DurationStats StatsFromJson(const nlohmann::json &j) {
  DurationStats s{j.at("mu").get<double>(), j.at("sigma").get<double>(),
                  j.at("count").get<int64_t>()};
  if (!(s.sigma > 0) || s.count < 2) throw Error("invalid duration stats");
  return s;
}

struct WordRate {
  double sr = 0.0;
  double nd = 0.0;
};

/// sr = 1 / max(1, duration); nd = (duration - mu) / sigma.
inline std::vector<WordRate> WordSrNd(const std::vector<WordTiming> &words,
                                      const DurationStats &stats) {
  std::vector<WordRate> out;
  out.reserve(words.size());
  for (const WordTiming &w : words) {
    const double dur = static_cast<double>(w.t_end - w.t_start);
    out.push_back({1.0 / std::max(1.0, dur), (dur - stats.mu) / stats.sigma});
  }
  return out;
}

struct CanonicalWord {
  std::string word;
  std::vector<std::string> phones;
};

inline std::vector<std::string> CanonicalWords(const std::vector<CanonicalWord> &words) {
  std::vector<std::string> out;
  for (const CanonicalWord &w : words) out.push_back(w.word);
  return out;
}

inline std::vector<std::string> CanonicalPhones(const std::vector<CanonicalWord> &words) {
  std::vector<std::string> out;
  for (const CanonicalWord &w : words) out.insert(out.end(), w.phones.begin(), w.phones.end());
  return out;
}

/// A one-hot word CN for a single token sequence; used to align timed
/// hypothesis words to the canonical words.
inline ConfusionNetwork OneHotCn(const std::string &utt_id,
                                 const std::vector<WordTiming> &words) {
  ConfusionNetwork cn{utt_id, CnLevel::kWord, {}, {}};
  for (const WordTiming &w : words) {
    ConfusionSlot s;
    s.probs[w.surface] = 1.0;
    cn.slots.push_back(std::move(s));
  }
  return cn;
}

/// Copies a per-word value to every phoneme of that word.
template <typename T>
std::vector<T> BroadcastToPhonemes(const std::vector<CanonicalWord> &words,
                                   const std::vector<T> &per_word) {
  if (per_word.size() != words.size()) throw Error("per-word column length mismatch");
  std::vector<T> out;
  for (std::size_t w = 0; w < words.size(); ++w)
    out.insert(out.end(), words[w].phones.size(), per_word[w]);
  return out;
}

struct WordColumns {
  int word_index = 0;
  double duration = 0.0;  // frames; 0 for canonical words without timing
  double sr = 0.0;
  double nd = 0.0;
  std::optional<std::pair<int64_t, int64_t>> span;
};

/// Per-canonical-word timing columns from timed hypothesis words aligned to
/// the canonical words. Unmatched canonical words get sr 0 and the
/// normalized duration of a zero-length word.
inline std::vector<WordColumns> CanonicalWordColumns(
    const std::vector<CanonicalWord> &canonical,
    const std::vector<WordTiming> &hyp_words, const CanonicalAlignment &alignment,
    const DurationStats &stats) {
  ValidateAlignment(alignment, hyp_words.size(), canonical.size());
  const std::vector<WordRate> rates = WordSrNd(hyp_words, stats);
  std::vector<WordColumns> out(canonical.size());
  for (std::size_t w = 0; w < canonical.size(); ++w) {
    out[w].word_index = static_cast<int>(w);
    out[w].nd = (0.0 - stats.mu) / stats.sigma;
  }
  for (const AlignOp &op : alignment.ops) {
    if (op.kind != AlignKind::kMatch) continue;
    const WordTiming &t = hyp_words[op.slot];
    WordColumns &c = out[op.canon];
    c.duration = static_cast<double>(t.t_end - t.t_start);
    c.sr = rates[op.slot].sr;
    c.nd = rates[op.slot].nd;
    c.span = std::make_pair(t.t_start, t.t_end);
  }
  return out;
}

/// Word columns broadcast to canonical phonemes.
inline std::vector<WordColumns> BroadcastWordFeatures(
    const std::vector<CanonicalWord> &canonical,
    const std::vector<WordTiming> &hyp_words, const CanonicalAlignment &alignment,
    const DurationStats &stats) {
  return BroadcastToPhonemes(canonical,
                             CanonicalWordColumns(canonical, hyp_words, alignment, stats));
}

struct FeatureRow {
  std::string phone;
  int word_index = 0;
  double cn_gop = 0.0;
  double cn_gop_margin = 0.0;
  std::vector<double> lpp;
  std::vector<double> lpr;
  double word_sr = 0.0;
  double word_nd = 0.0;
  double word_duration = 0.0;
  std::optional<double> cn_wgop;
  std::optional<double> cn_wgop_margin;
};

struct WordSpan {
  std::string word;
  std::optional<std::pair<int64_t, int64_t>> span;  // inclusive frames
};

struct FeatureMatrix {
  std::string utt_id;
  std::vector<FeatureRow> rows;
  std::vector<WordSpan> words;
};

/// Everything needed to featurize one utterance.
struct UtteranceInputs {
  const ConfusionNetwork *word_cn = nullptr;
  const ConfusionNetwork *phone_cn = nullptr;
  const std::vector<CanonicalWord> *canonical = nullptr;
  const CanonicalAlignment *phone_alignment = nullptr;
  const CanonicalAlignment *word_alignment = nullptr;  // null: no CN-WGOP
  /// Timed hypothesis tokens with their alignment to the canonical words;
  /// null when the N-best list has no timings.
  const std::vector<WordTiming> *hyp_words = nullptr;
  const CanonicalAlignment *timing_alignment = nullptr;
};

inline FeatureMatrix ExtractFeatures(const UtteranceInputs &in,
                                     const std::vector<std::string> &inventory,
                                     const DurationStats &stats,
                                     double log_floor = kDefaultLogFloor) {
  const std::vector<CanonicalWord> &canon = *in.canonical;
  const std::vector<std::string> phones = CanonicalPhones(canon);
  const std::vector<PhoneFeatures> pf =
      ComputeCnFeatures(*in.phone_cn, phones, *in.phone_alignment, inventory, log_floor);

  std::vector<WordColumns> word_cols;
  if (in.hyp_words != nullptr) {
    word_cols = CanonicalWordColumns(canon, *in.hyp_words, *in.timing_alignment, stats);
  } else {
    word_cols.resize(canon.size());
    for (std::size_t w = 0; w < canon.size(); ++w) {
      word_cols[w].word_index = static_cast<int>(w);
      word_cols[w].nd = (0.0 - stats.mu) / stats.sigma;
    }
  }
  std::vector<std::optional<WordGop>> wgop(canon.size());
  if (in.word_alignment != nullptr) {
    std::vector<WordGop> g =
        ComputeCnWgop(*in.word_cn, CanonicalWords(canon), *in.word_alignment, log_floor);
    for (std::size_t w = 0; w < g.size(); ++w) wgop[w] = g[w];
  }

  FeatureMatrix fm;
  fm.utt_id = in.phone_cn->utt_id;
  for (std::size_t w = 0; w < canon.size(); ++w)
    fm.words.push_back({canon[w].word, word_cols[w].span});
  const std::vector<WordColumns> per_phone = BroadcastToPhonemes(canon, word_cols);
  const std::vector<std::optional<WordGop>> wgop_phone = BroadcastToPhonemes(canon, wgop);
  for (std::size_t i = 0; i < phones.size(); ++i) {
    FeatureRow r;
    r.phone = phones[i];
    r.word_index = per_phone[i].word_index;
    r.cn_gop = pf[i].cn_gop;
    r.cn_gop_margin = pf[i].cn_gop_margin;
    r.lpp = pf[i].lpp;
    r.lpr = pf[i].lpr;
    r.word_sr = per_phone[i].sr;
    r.word_nd = per_phone[i].nd;
    r.word_duration = per_phone[i].duration;
    if (wgop_phone[i]) {
      r.cn_wgop = wgop_phone[i]->cn_wgop;
      r.cn_wgop_margin = wgop_phone[i]->cn_wgop_margin;
    }
    fm.rows.push_back(std::move(r));
  }
  return fm;
}

// Serialization: a header record naming the inventory (LPP/LPR column
// meaning), then one record per utterance.

inline nlohmann::json FeatureHeaderJson(const std::vector<std::string> &inventory,
                                        double log_floor) {
  return {{"header", {{"inventory", inventory}, {"log_floor", log_floor}}}};
}

inline nlohmann::json ToJson(const FeatureMatrix &fm) {
  nlohmann::json rows = nlohmann::json::array();
  for (const FeatureRow &r : fm.rows) {
    nlohmann::json jr{{"phone", r.phone},
                      {"word_index", r.word_index},
                      {"cn_gop", r.cn_gop},
                      {"cn_gop_margin", r.cn_gop_margin},
                      {"lpp", r.lpp},
                      {"lpr", r.lpr},
                      {"word_sr", r.word_sr},
                      {"word_nd", r.word_nd},
                      {"word_duration", r.word_duration}};
    jr["cn_wgop"] = r.cn_wgop ? nlohmann::json(*r.cn_wgop) : nlohmann::json();
    jr["cn_wgop_margin"] =
        r.cn_wgop_margin ? nlohmann::json(*r.cn_wgop_margin) : nlohmann::json();
    rows.push_back(std::move(jr));
  }
  nlohmann::json words = nlohmann::json::array();
  for (const WordSpan &w : fm.words) {
    nlohmann::json jw{{"word", w.word}};
    if (w.span) {
      jw["t_start"] = w.span->first;
      jw["t_end"] = w.span->second;
    } else {
      jw["t_start"] = nullptr;
      jw["t_end"] = nullptr;
    }
    words.push_back(std::move(jw));
  }
  return {{"utt_id", fm.utt_id}, {"rows", rows}, {"words", words}};
}

inline FeatureMatrix FeaturesFromJson(const nlohmann::json &j) {
  FeatureMatrix fm;
  try {
    fm.utt_id = j.at("utt_id").get<std::string>();
    for (const auto &jr : j.at("rows")) {
      FeatureRow r;
      r.phone = jr.at("phone").get<std::string>();
      r.word_index = jr.at("word_index").get<int>();
      r.cn_gop = jr.at("cn_gop").get<double>();
      r.cn_gop_margin = jr.at("cn_gop_margin").get<double>();
      r.lpp = jr.at("lpp").get<std::vector<double>>();
      r.lpr = jr.at("lpr").get<std::vector<double>>();
      r.word_sr = jr.at("word_sr").get<double>();
      r.word_nd = jr.at("word_nd").get<double>();
      r.word_duration = jr.value("word_duration", 0.0);
      if (jr.contains("cn_wgop") && !jr["cn_wgop"].is_null())
        r.cn_wgop = jr["cn_wgop"].get<double>();
      if (jr.contains("cn_wgop_margin") && !jr["cn_wgop_margin"].is_null())
        r.cn_wgop_margin = jr["cn_wgop_margin"].get<double>();
      fm.rows.push_back(std::move(r));
    }
    for (const auto &jw : j.at("words")) {
      WordSpan w{jw.at("word").get<std::string>(), std::nullopt};
      if (!jw.at("t_start").is_null())
        w.span = std::make_pair(jw["t_start"].get<int64_t>(), jw["t_end"].get<int64_t>());
      fm.words.push_back(std::move(w));
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error(std::string("malformed feature record: ") + e.what());
  }
  return fm;
}

inline nlohmann::json ToJson(const CanonicalAlignment &a) {
  nlohmann::json ops = nlohmann::json::array();
  for (const AlignOp &op : a.ops) {
    switch (op.kind) {
      case AlignKind::kMatch:
        ops.push_back({{"op", "match"}, {"slot", op.slot}, {"canon", op.canon}});
        break;
      case AlignKind::kDeleteCanonical:
        ops.push_back({{"op", "delete"}, {"canon", op.canon}});
        break;
      case AlignKind::kInsertSlot:
        ops.push_back({{"op", "insert"}, {"slot", op.slot}});
        break;
    }
  }
  return {{"cost", a.cost}, {"ops", ops}};
}

inline CanonicalAlignment AlignmentFromJson(const nlohmann::json &j) {
  CanonicalAlignment a;
  try {
    a.cost = j.at("cost").get<double>();
    for (const auto &jo : j.at("ops")) {
      const std::string op = jo.at("op").get<std::string>();
      if (op == "match")
        a.ops.push_back({AlignKind::kMatch, jo.at("slot").get<int>(), jo.at("canon").get<int>()});
      else if (op == "delete")
        a.ops.push_back({AlignKind::kDeleteCanonical, -1, jo.at("canon").get<int>()});
      else if (op == "insert")
        a.ops.push_back({AlignKind::kInsertSlot, jo.at("slot").get<int>(), -1});
      else
        throw Error("unknown alignment op: " + op);
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error(std::string("malformed alignment record: ") + e.what());
  }
  return a;
}

}  // namespace cngop
