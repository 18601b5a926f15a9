// cngop/nbest.hpp

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

// N-best lists: wire-format parsing, normalization, de-duplication and
// posterior computation.

#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cngop/common.hpp"
#include "cngop/text_norm.hpp"

namespace cngop {

struct WordTiming {
  std::string surface;
  int64_t t_start = 0;  // frame index
  int64_t t_end = 0;
};

struct RawHypothesis {
  int rank = 0;
  std::string text;
  double log_score = 0.0;
  std::optional<std::vector<WordTiming>> words;
};

struct UtteranceHyps {
  std::string utt_id;
  double frame_rate = 100.0;
  std::vector<RawHypothesis> hyps;
};

/// Tokens with their model score, the input to de-duplication.
struct ScoredTokens {
  std::vector<std::string> tokens;
  double log_score = 0.0;
  int rank = 0;
  /// One timing per token when present.
  std::optional<std::vector<WordTiming>> words;
};

struct Hypothesis {
  std::vector<std::string> tokens;
  double log_score = 0.0;
  double posterior = 0.0;
  int rank = 0;
  std::optional<std::vector<WordTiming>> words;
};

/// Unique hypotheses sorted by descending posterior; posteriors sum to 1.
struct NBestList {
  std::string utt_id;
  double frame_rate = 100.0;
  std::vector<Hypothesis> hyps;
};

namespace internal {

inline double ParseLogScore(const nlohmann::json &v, int lineno) {
  double score;
  if (v.is_number()) {
    score = v.get<double>();
  } else if (v.is_string()) {
    const std::string s = v.get<std::string>();
    char *end = nullptr;
    score = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0')
      throw Error("line " + std::to_string(lineno) + ": log_score is not a number");
  } else {
    throw Error("line " + std::to_string(lineno) + ": log_score is not a number");
  }
  if (!std::isfinite(score))
    throw Error("line " + std::to_string(lineno) + ": log_score is not finite");
  return score;
}

inline void ValidateTimings(const std::vector<WordTiming> &words,
                            const std::string &where) {
  int64_t prev_end = -1;
  for (const WordTiming &w : words) {
    if (w.t_start < 0 || w.t_end < w.t_start)
      throw Error(where + ": invalid word span for '" + w.surface + "'");
    if (w.t_start < prev_end)
      throw Error(where + ": overlapping word spans at '" + w.surface + "'");
    prev_end = w.t_end;
  }
}

}  // namespace internal

/// Reads one JSON record per line:
///   {"utt_id": str, "rank": int, "text": str, "log_score": float,
///    "words": [{"w": str, "t_start": int, "t_end": int}], "frame_rate": float}
/// "words" and "frame_rate" are optional. Utterances keep first-appearance
/// order; hypotheses keep line order.
inline std::vector<UtteranceHyps> ParseNBest(std::istream &in) {
  std::vector<UtteranceHyps> out;
  std::map<std::string, std::size_t> index;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (Trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error &e) {
      throw Error(where + ": malformed record: " + e.what());
    }
    if (!rec.is_object()) throw Error(where + ": record is not an object");
    if (!rec.contains("utt_id") || !rec["utt_id"].is_string())
      throw Error(where + ": missing utt_id");
    if (!rec.contains("text") || !rec["text"].is_string())
      throw Error(where + ": missing text");
    if (!rec.contains("log_score")) throw Error(where + ": missing log_score");

    RawHypothesis hyp;
    hyp.text = rec["text"].get<std::string>();
    hyp.log_score = internal::ParseLogScore(rec["log_score"], lineno);
    const std::string utt = rec["utt_id"].get<std::string>();
    auto [it, inserted] = index.try_emplace(utt, out.size());
    if (inserted) out.push_back(UtteranceHyps{utt, 100.0, {}});
    UtteranceHyps &group = out[it->second];
    hyp.rank = rec.contains("rank") && rec["rank"].is_number_integer()
                   ? rec["rank"].get<int>()
                   : static_cast<int>(group.hyps.size());
    if (rec.contains("frame_rate")) {
      if (!rec["frame_rate"].is_number() || rec["frame_rate"].get<double>() <= 0)
        throw Error(where + ": frame_rate must be a positive number");
      group.frame_rate = rec["frame_rate"].get<double>();
    }
    if (rec.contains("words") && !rec["words"].is_null()) {
      if (!rec["words"].is_array()) throw Error(where + ": words is not an array");
      std::vector<WordTiming> words;
      for (const auto &w : rec["words"]) {
        if (!w.is_object() || !w.contains("w") || !w.contains("t_start") ||
            !w.contains("t_end") || !w["t_start"].is_number_integer() ||
            !w["t_end"].is_number_integer())
          throw Error(where + ": malformed word timing");
        words.push_back({w["w"].get<std::string>(), w["t_start"].get<int64_t>(),
                         w["t_end"].get<int64_t>()});
      }
      internal::ValidateTimings(words, where);
      hyp.words = std::move(words);
    }
    group.hyps.push_back(std::move(hyp));
  }
  return out;
}

/// Merges identical token sequences (keeping the highest score, then the
/// lowest rank) and converts scores to posteriors with a stable softmax at
/// the given temperature. With `length_normalize`, scores are divided by the
/// token count (minimum 1) before the softmax.
inline NBestList DedupeAndPosteriors(std::string utt_id,
                                     const std::vector<ScoredTokens> &hyps,
                                     double temperature = 1.0,
                                     bool length_normalize = false) {
  if (!(temperature > 0) || !std::isfinite(temperature))
    throw Error("temperature must be positive");
  std::map<std::vector<std::string>, std::size_t> seen;
  std::vector<ScoredTokens> unique;
  for (const ScoredTokens &h : hyps) {
    if (!std::isfinite(h.log_score))
      throw Error(utt_id + ": non-finite log_score");
    auto [it, inserted] = seen.try_emplace(h.tokens, unique.size());
    if (inserted) {
      unique.push_back(h);
      continue;
    }
    ScoredTokens &kept = unique[it->second];
    if (h.log_score > kept.log_score ||
        (h.log_score == kept.log_score && h.rank < kept.rank))
      kept = h;
  }
  if (unique.empty()) throw Error(utt_id + ": no hypotheses");

  std::vector<double> z(unique.size());
  for (std::size_t i = 0; i < unique.size(); ++i) {
    double s = unique[i].log_score;
    if (length_normalize)
      s /= static_cast<double>(std::max<std::size_t>(1, unique[i].tokens.size()));
    z[i] = s / temperature;
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (double &v : z) {
    v = std::exp(v - zmax);
    denom += v;
  }

  NBestList list;
  list.utt_id = std::move(utt_id);
  for (std::size_t i = 0; i < unique.size(); ++i) {
    list.hyps.push_back({unique[i].tokens, unique[i].log_score, z[i] / denom,
                         unique[i].rank, unique[i].words});
  }
  std::stable_sort(list.hyps.begin(), list.hyps.end(),
                   [](const Hypothesis &a, const Hypothesis &b) {
                     if (a.posterior != b.posterior) return a.posterior > b.posterior;
                     return a.rank < b.rank;
                   });
  return list;
}

struct NormalizeOptions {
  NormalizationRules rules;
  ScriptPolicy policy = ScriptPolicy::kRomanizeBasic;
  UScriptCode target_script = USCRIPT_LATIN;
  double temperature = 1.0;
  bool length_normalize = false;
};

/// Normalizes text and timings of every hypothesis, applies the script
/// policy, then de-duplicates. Timings whose surfaces do not normalize to the
/// hypothesis tokens are dropped with a warning.
inline NBestList NormalizeUtterance(const UtteranceHyps &utt,
                                    const NormalizeOptions &opts,
                                    Warnings *warnings = nullptr) {
  std::vector<ScoredTokens> scored;
  for (const RawHypothesis &raw : utt.hyps) {
    auto tokens = ApplyScriptPolicy(NormalizeText(raw.text, opts.rules),
                                    opts.policy, opts.target_script, opts.rules);
    if (!tokens) continue;
    ScoredTokens st{std::move(*tokens), raw.log_score, raw.rank, std::nullopt};
    if (raw.words) {
      std::vector<WordTiming> timed;
      bool rejected = false;
      for (const WordTiming &w : *raw.words) {
        auto sub = ApplyScriptPolicy(NormalizeText(w.surface, opts.rules),
                                     opts.policy, opts.target_script, opts.rules);
        if (!sub) {
          rejected = true;
          break;
        }
        for (std::string &t : *sub) timed.push_back({std::move(t), w.t_start, w.t_end});
      }
      bool consistent = !rejected && timed.size() == st.tokens.size();
      for (std::size_t i = 0; consistent && i < timed.size(); ++i)
        consistent = timed[i].surface == st.tokens[i];
      if (consistent)
        st.words = std::move(timed);
      else
        Warn(warnings, utt.utt_id + " rank " + std::to_string(raw.rank) +
                           ": word timings do not match text; timings dropped");
    }
    scored.push_back(std::move(st));
  }
  if (scored.empty()) throw Error(utt.utt_id + ": no hypotheses");
  NBestList list = DedupeAndPosteriors(utt.utt_id, scored, opts.temperature,
                                       opts.length_normalize);
  list.frame_rate = utt.frame_rate;
  return list;
}

/// Highest-posterior hypothesis that carries word timings, if any.
inline const Hypothesis *TopTimedHypothesis(const NBestList &list) {
  for (const Hypothesis &h : list.hyps)
    if (h.words) return &h;
  return nullptr;
}

// Serialization of normalized lists, one JSON record per utterance.

inline void to_json(nlohmann::json &j, const WordTiming &w) {
  j = nlohmann::json{{"w", w.surface}, {"t_start", w.t_start}, {"t_end", w.t_end}};
}

inline void from_json(const nlohmann::json &j, WordTiming &w) {
  w.surface = j.at("w").get<std::string>();
  w.t_start = j.at("t_start").get<int64_t>();
  w.t_end = j.at("t_end").get<int64_t>();
}

inline nlohmann::json ToJson(const NBestList &list) {
  nlohmann::json hyps = nlohmann::json::array();
  for (const Hypothesis &h : list.hyps) {
    nlohmann::json jh{{"rank", h.rank},
                      {"tokens", h.tokens},
                      {"log_score", h.log_score},
                      {"posterior", h.posterior}};
    if (h.words) jh["words"] = *h.words;
    hyps.push_back(std::move(jh));
  }
  return {{"utt_id", list.utt_id}, {"frame_rate", list.frame_rate}, {"hyps", hyps}};
}

inline NBestList NBestFromJson(const nlohmann::json &j) {
  NBestList list;
  list.utt_id = j.at("utt_id").get<std::string>();
  list.frame_rate = j.value("frame_rate", 100.0);
  double total = 0.0;
  for (const auto &jh : j.at("hyps")) {
    Hypothesis h;
    h.rank = jh.at("rank").get<int>();
    h.tokens = jh.at("tokens").get<std::vector<std::string>>();
    h.log_score = jh.at("log_score").get<double>();
    h.posterior = jh.at("posterior").get<double>();
    if (jh.contains("words")) h.words = jh["words"].get<std::vector<WordTiming>>();
    total += h.posterior;
    list.hyps.push_back(std::move(h));
  }
  if (list.hyps.empty()) throw Error(list.utt_id + ": no hypotheses");
  if (std::abs(total - 1.0) > 1e-9)
    throw Error(list.utt_id + ": posteriors do not sum to 1");
  return list;
}

}  // namespace cngop
