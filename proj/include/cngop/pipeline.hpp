// cngop/pipeline.hpp

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

// Pipeline stages behind the `cngop` command line tool. Every stage reads
// and writes JSON-lines files sorted by utt_id, so each stage's output feeds
// the next one unchanged:
//
//   normalize -> build-cn -> align -> stats-fit -> features -> score
//                         \-> decode-wer
//   frame-gop (hybrid baseline path, independent)

#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cngop/cn_features.hpp"
#include "cngop/common.hpp"
#include "cngop/confusion_network.hpp"
#include "cngop/frame_gop.hpp"
#include "cngop/lexicon.hpp"
#include "cngop/nbest.hpp"
#include "cngop/text_norm.hpp"
#include "cngop/wer.hpp"
#include "cngop/xattn.hpp"

namespace cngop {

namespace fs = std::filesystem;

/// The single source of truth for a run. Relative paths resolve against the
/// directory of the config file.
struct PipelineConfig {
  std::string language = "en";
  std::string script_policy = "romanize_basic";
  std::string target_script = "Latin";
  std::string normalization_rules;  // optional
  std::string lexicon;
  std::string supplement;  // optional
  std::string phones;      // optional inventory file
  bool use_priors = false;
  int max_variants = 6;
  std::string oov_policy = "skip_word";
  double temperature = 1.0;
  bool length_normalize = false;
  double log_floor = kDefaultLogFloor;
  double deletion_cost = kDefaultDeletionCost;
  std::string mask_mode = "restricted";
  double frame_rate = 100.0;
  std::string stats;  // default stats path
  std::vector<double> class_values = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  ModelConfig model;

  void Validate() const {
    auto need = [](const std::string &path, const char *what) {
      if (!path.empty() && !fs::exists(path))
        throw Error(std::string("config: ") + what + " not found: " + path);
    };
    need(normalization_rules, "normalization rules");
    need(lexicon, "lexicon");
    need(supplement, "supplement lexicon");
    need(phones, "phone inventory");
    ParseScriptPolicy(script_policy);
    ParseScript(target_script);
    ParseOovPolicy(oov_policy);
    ParseMaskMode(mask_mode);
    if (!(temperature > 0) || !std::isfinite(temperature))
      throw Error("config: temperature must be positive");
    if (!(log_floor < 0) || !std::isfinite(log_floor))
      throw Error("config: log_floor must be a finite negative number");
    if (!(deletion_cost > 0) || deletion_cost > 2)
      throw Error("config: deletion_cost must be in (0, 2]");
    if (!(frame_rate > 0)) throw Error("config: frame_rate must be positive");
    if (max_variants < 1) throw Error("config: max_variants must be at least 1");
    if (static_cast<int>(class_values.size()) != model.n_classes)
      throw Error("config: class_values must have model.n_classes entries");
  }
};

inline PipelineConfig LoadPipelineConfig(const std::string &path) {
  std::ifstream in = OpenInput(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error &e) {
    throw Error(path + ": malformed config: " + e.what());
  }
  static const std::set<std::string> kKeys = {
      "language",   "script_policy", "target_script",  "normalization_rules",
      "lexicon",    "supplement",    "phones",         "use_priors",
      "max_variants", "oov_policy",  "temperature",    "length_normalize",
      "log_floor",  "deletion_cost", "mask_mode",      "frame_rate",
      "stats",      "class_values",  "model"};
  for (const auto &[key, _] : j.items())
    if (!kKeys.count(key)) throw Error(path + ": unknown config key '" + key + "'");

  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string &p) -> std::string {
    if (p.empty()) return p;
    fs::path fp(p);
    return fp.is_relative() ? (base / fp).lexically_normal().string() : p;
  };
  PipelineConfig c;
  try {
    c.language = j.value("language", c.language);
    c.script_policy = j.value("script_policy", c.script_policy);
    c.target_script = j.value("target_script", c.target_script);
    c.normalization_rules = resolve(j.value("normalization_rules", std::string()));
    c.lexicon = resolve(j.value("lexicon", std::string()));
    c.supplement = resolve(j.value("supplement", std::string()));
    c.phones = resolve(j.value("phones", std::string()));
    c.use_priors = j.value("use_priors", c.use_priors);
    c.max_variants = j.value("max_variants", c.max_variants);
    c.oov_policy = j.value("oov_policy", c.oov_policy);
    c.temperature = j.value("temperature", c.temperature);
    c.length_normalize = j.value("length_normalize", c.length_normalize);
    c.log_floor = j.value("log_floor", c.log_floor);
    c.deletion_cost = j.value("deletion_cost", c.deletion_cost);
    c.mask_mode = j.value("mask_mode", c.mask_mode);
    c.frame_rate = j.value("frame_rate", c.frame_rate);
    c.stats = resolve(j.value("stats", std::string()));
    c.class_values = j.value("class_values", c.class_values);
    if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
    if (!j.contains("class_values") && c.model.n_classes != 11) {
      c.class_values.clear();
      for (int k = 0; k < c.model.n_classes; ++k) c.class_values.push_back(k);
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error(path + ": bad config value: " + e.what());
  }
  c.Validate();
  return c;
}

/// Config-derived resources shared by the stages.
struct PipelineContext {
  PipelineConfig config;
  NormalizeOptions norm;
  std::optional<Lexicon> lexicon;

  explicit PipelineContext(PipelineConfig cfg, Warnings *warnings = nullptr)
      : config(std::move(cfg)) {
    if (!config.normalization_rules.empty())
      norm.rules = LoadNormalizationRules(config.normalization_rules);
    norm.policy = ParseScriptPolicy(config.script_policy);
    norm.target_script = ParseScript(config.target_script);
    norm.temperature = config.temperature;
    norm.length_normalize = config.length_normalize;
    if (!config.lexicon.empty()) {
      LexiconOptions lo;
      lo.use_priors = config.use_priors;
      lo.max_variants = static_cast<std::size_t>(config.max_variants);
      if (!config.phones.empty()) lo.inventory = LoadInventory(config.phones);
      lexicon = LoadLexicon(config.lexicon, config.supplement, lo, warnings);
    }
  }

  const Lexicon &lex() const {
    if (!lexicon) throw Error("config: no lexicon configured");
    return *lexicon;
  }

  OovPolicy oov() const { return ParseOovPolicy(config.oov_policy); }
};

// ---------------------------------------------------------------------------
// Record I/O helpers.

inline std::vector<nlohmann::json> ReadJsonLines(const std::string &path) {
  std::ifstream in = OpenInput(path);
  std::vector<nlohmann::json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (Trim(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error &e) {
      throw Error(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
  }
  return out;
}

inline void WriteJsonLines(const std::string &path, const std::vector<nlohmann::json> &records) {
  std::ofstream out = OpenOutput(path);
  for (const auto &r : records) out << r.dump() << '\n';
}

inline void WriteJson(const std::string &path, const nlohmann::json &j) {
  std::ofstream out = OpenOutput(path);
  out << j.dump(2) << '\n';
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first failure (by
/// index) is rethrown.
template <typename F>
void ParallelFor(std::size_t n, int jobs, F &&fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(jobs, static_cast<int>(n)); ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto &th : pool) th.join();
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

/// Thread-safe warning collection, flushed in a fixed order.
class WarningLog {
 public:
  void Add(const Warnings &w) {
    std::lock_guard<std::mutex> lock(mu_);
    all_.insert(all_.end(), w.begin(), w.end());
  }
  void Flush(std::ostream &err) {
    std::map<std::string, int> counts;
    for (const auto &w : all_) ++counts[w];
    for (const auto &[w, n] : counts)
      err << "WARNING: " << w << (n > 1 ? " (x" + std::to_string(n) + ")" : "") << '\n';
    all_.clear();
  }

 private:
  std::mutex mu_;
  Warnings all_;
};

struct Reference {
  std::string utt_id;
  std::string text;
  std::vector<CanonicalWord> canonical;
  std::optional<double> score;
};

/// Reference records: {"utt_id", "text", "score"?, "prons"?: [[phones]...]}.
/// Canonical pronunciations default to each word's first lexicon entry.
inline std::map<std::string, Reference> ReadReferences(const std::string &path,
                                                       const PipelineContext &ctx) {
  std::map<std::string, Reference> out;
  for (const auto &j : ReadJsonLines(path)) {
    Reference r;
    try {
      r.utt_id = j.at("utt_id").get<std::string>();
      r.text = j.at("text").get<std::string>();
      if (j.contains("score") && !j["score"].is_null()) r.score = j["score"].get<double>();
    } catch (const nlohmann::json::exception &e) {
      throw Error(path + ": malformed reference record: " + e.what());
    }
    auto tokens = ApplyScriptPolicy(NormalizeText(r.text, ctx.norm.rules), ctx.norm.policy,
                                    ctx.norm.target_script, ctx.norm.rules);
    if (!tokens || tokens->empty())
      throw Error(path + ": reference for " + r.utt_id + " is empty after normalization");
    std::vector<std::vector<std::string>> prons;
    if (j.contains("prons")) prons = j["prons"].get<std::vector<std::vector<std::string>>>();
    if (!prons.empty() && prons.size() != tokens->size())
      throw Error(path + ": " + r.utt_id + " has " + std::to_string(prons.size()) +
                  " prons for " + std::to_string(tokens->size()) + " words");
    for (std::size_t w = 0; w < tokens->size(); ++w) {
      CanonicalWord cw{(*tokens)[w], {}};
      if (!prons.empty()) {
        cw.phones = prons[w];
      } else if (ctx.lexicon) {
        std::span<const PronEntry> entries = ctx.lexicon->Lookup(cw.word);
        if (entries.empty())
          throw Error(path + ": canonical word '" + cw.word + "' of " + r.utt_id +
                      " is not in the lexicon");
        cw.phones = entries.front().phones;
      }
      if (ctx.lexicon)
        for (const std::string &ph : cw.phones)
          if (!ctx.lexicon->inventory().count(ph))
            throw Error(path + ": canonical phoneme '" + ph + "' of " + r.utt_id +
                        " not in inventory");
      r.canonical.push_back(std::move(cw));
    }
    if (!out.emplace(r.utt_id, r).second)
      throw Error(path + ": duplicate reference for " + r.utt_id);
  }
  return out;
}

template <typename T>
const T &Require(const std::map<std::string, T> &m, const std::string &utt, const char *what) {
  auto it = m.find(utt);
  if (it == m.end()) throw Error("no " + std::string(what) + " for utterance " + utt);
  return it->second;
}

// ---------------------------------------------------------------------------
// Stages.

inline std::vector<NBestList> StageNormalize(const PipelineContext &ctx, const std::string &in_path,
                                             int jobs, WarningLog *log) {
  std::ifstream in = OpenInput(in_path);
  std::vector<UtteranceHyps> utts = ParseNBest(in);
  if (utts.empty()) throw Error(in_path + ": no hypotheses");
  std::sort(utts.begin(), utts.end(),
            [](const auto &a, const auto &b) { return a.utt_id < b.utt_id; });
  std::vector<NBestList> out(utts.size());
  ParallelFor(utts.size(), jobs, [&](std::size_t i) {
    Warnings w;
    out[i] = NormalizeUtterance(utts[i], ctx.norm, &w);
    log->Add(w);
  });
  return out;
}

inline std::map<std::string, NBestList> ReadNormalized(const std::string &path) {
  std::map<std::string, NBestList> out;
  for (const auto &j : ReadJsonLines(path)) {
    NBestList l;
    try {
      l = NBestFromJson(j);
    } catch (const nlohmann::json::exception &e) {
      throw Error(path + ": malformed N-best record: " + e.what());
    }
    out.emplace(l.utt_id, std::move(l));
  }
  if (out.empty()) throw Error(path + ": no hypotheses");
  return out;
}

struct CnPair {
  ConfusionNetwork word;
  ConfusionNetwork phone;
};

inline std::vector<CnPair> StageBuildCn(const PipelineContext &ctx,
                                        const std::map<std::string, NBestList> &nbest, int jobs,
                                        WarningLog *log) {
  std::vector<const NBestList *> lists;
  for (const auto &[_, l] : nbest) lists.push_back(&l);
  std::vector<CnPair> out(lists.size());
  ParallelFor(lists.size(), jobs, [&](std::size_t i) {
    Warnings w;
    out[i].word = BuildWordCn(*lists[i]);
    out[i].phone = ExpandToPhonemeCn(out[i].word, ctx.lex(), ctx.oov(), &w);
    log->Add(w);
  });
  return out;
}

inline std::map<std::string, CnPair> ReadCns(const std::string &path) {
  std::map<std::string, CnPair> out;
  for (const auto &j : ReadJsonLines(path)) {
    ConfusionNetwork cn = CnFromJson(j);
    CnPair &p = out[cn.utt_id];
    (cn.level == CnLevel::kWord ? p.word : p.phone) = std::move(cn);
  }
  return out;
}

struct UtteranceAlignment {
  std::string utt_id;
  std::vector<CanonicalWord> canonical;
  CanonicalAlignment phone;
  CanonicalAlignment word;
  std::optional<std::vector<WordTiming>> timed_words;
  std::optional<CanonicalAlignment> timing;
};

inline nlohmann::json ToJson(const UtteranceAlignment &a) {
  nlohmann::json canon = nlohmann::json::array();
  for (const CanonicalWord &w : a.canonical)
    canon.push_back({{"word", w.word}, {"phones", w.phones}});
  nlohmann::json j{{"utt_id", a.utt_id},
                   {"canonical", canon},
                   {"phoneme", ToJson(a.phone)},
                   {"word", ToJson(a.word)}};
  j["timed_words"] = a.timed_words ? nlohmann::json(*a.timed_words) : nlohmann::json();
  j["timing"] = a.timing ? ToJson(*a.timing) : nlohmann::json();
  return j;
}

inline UtteranceAlignment AlignmentRecordFromJson(const nlohmann::json &j) {
  UtteranceAlignment a;
  try {
    a.utt_id = j.at("utt_id").get<std::string>();
    for (const auto &jw : j.at("canonical"))
      a.canonical.push_back({jw.at("word").get<std::string>(),
                             jw.at("phones").get<std::vector<std::string>>()});
    a.phone = AlignmentFromJson(j.at("phoneme"));
    a.word = AlignmentFromJson(j.at("word"));
    if (!j.at("timed_words").is_null())
      a.timed_words = j["timed_words"].get<std::vector<WordTiming>>();
    if (!j.at("timing").is_null()) a.timing = AlignmentFromJson(j["timing"]);
  } catch (const nlohmann::json::exception &e) {
    throw Error(std::string("malformed alignment record: ") + e.what());
  }
  return a;
}

inline std::vector<UtteranceAlignment> StageAlign(const PipelineContext &ctx,
                                                  const std::map<std::string, CnPair> &cns,
                                                  const std::map<std::string, NBestList> &nbest,
                                                  const std::map<std::string, Reference> &refs,
                                                  int jobs) {
  std::vector<const CnPair *> items;
  for (const auto &[_, p] : cns) items.push_back(&p);
  std::vector<UtteranceAlignment> out(items.size());
  ParallelFor(items.size(), jobs, [&](std::size_t i) {
    const CnPair &p = *items[i];
    const std::string &utt = p.word.utt_id;
    const Reference &ref = Require(refs, utt, "reference");
    UtteranceAlignment &a = out[i];
    a.utt_id = utt;
    a.canonical = ref.canonical;
    a.phone = AlignCnToCanonical(p.phone, CanonicalPhones(ref.canonical), ctx.config.deletion_cost,
                                 &ctx.lex().inventory());
    a.word = AlignCnToCanonical(p.word, CanonicalWords(ref.canonical), ctx.config.deletion_cost);
    if (const Hypothesis *h = TopTimedHypothesis(Require(nbest, utt, "N-best list"))) {
      a.timed_words = *h->words;
      a.timing = AlignCnToCanonical(OneHotCn(utt, *h->words), CanonicalWords(ref.canonical),
                                    ctx.config.deletion_cost);
    }
  });
  return out;
}

inline std::map<std::string, UtteranceAlignment> ReadAlignments(const std::string &path) {
  std::map<std::string, UtteranceAlignment> out;
  for (const auto &j : ReadJsonLines(path)) {
    UtteranceAlignment a = AlignmentRecordFromJson(j);
    out.emplace(a.utt_id, std::move(a));
  }
  return out;
}

/// Word duration seen by every canonical phoneme row (0 for words without a
/// timing), the population the normalized-duration column is standardized over.
inline std::vector<double> RowDurations(const UtteranceAlignment &a) {
  std::vector<double> per_word(a.canonical.size(), 0.0);
  if (a.timed_words && a.timing) {
    ValidateAlignment(*a.timing, a.timed_words->size(), a.canonical.size());
    for (const AlignOp &op : a.timing->ops)
      if (op.kind == AlignKind::kMatch) {
        const WordTiming &t = (*a.timed_words)[op.slot];
        per_word[op.canon] = static_cast<double>(t.t_end - t.t_start);
      }
  }
  return BroadcastToPhonemes(a.canonical, per_word);
}

inline DurationStats StageStatsFit(const std::map<std::string, UtteranceAlignment> &aligns) {
  std::vector<double> durations;
  for (const auto &[_, a] : aligns) {
    std::vector<double> d = RowDurations(a);
    durations.insert(durations.end(), d.begin(), d.end());
  }
  return FitDurationStats(durations);
}

inline std::vector<FeatureMatrix> StageFeatures(const PipelineContext &ctx,
                                                const std::map<std::string, CnPair> &cns,
                                                const std::map<std::string, UtteranceAlignment> &aligns,
                                                const DurationStats &stats, int jobs) {
  const std::vector<std::string> inventory = ctx.lex().InventoryVector();
  std::vector<const UtteranceAlignment *> items;
  for (const auto &[_, a] : aligns) items.push_back(&a);
  std::vector<FeatureMatrix> out(items.size());
  ParallelFor(items.size(), jobs, [&](std::size_t i) {
    const UtteranceAlignment &a = *items[i];
    const CnPair &p = Require(cns, a.utt_id, "confusion network");
    UtteranceInputs in;
    in.word_cn = &p.word;
    in.phone_cn = &p.phone;
    in.canonical = &a.canonical;
    in.phone_alignment = &a.phone;
    in.word_alignment = &a.word;
    if (a.timed_words && a.timing) {
      in.hyp_words = &*a.timed_words;
      in.timing_alignment = &*a.timing;
    }
    out[i] = ExtractFeatures(in, inventory, stats, ctx.config.log_floor);
  });
  return out;
}

struct DecodeWerReport {
  struct Row {
    std::string utt_id;
    WerResult one_best;
    WerResult cn;
    std::vector<std::string> one_best_words;
    std::vector<std::string> cn_words;
  };
  std::vector<Row> rows;
  WerResult one_best_total;
  WerResult cn_total;
};

inline void Accumulate(WerResult *total, const WerResult &r) {
  total->substitutions += r.substitutions;
  total->insertions += r.insertions;
  total->deletions += r.deletions;
  total->ref_length += r.ref_length;
  total->rate = static_cast<double>(total->errors()) / static_cast<double>(total->ref_length);
}

inline DecodeWerReport StageDecodeWer(const std::map<std::string, CnPair> &cns,
                                      const std::map<std::string, NBestList> &nbest,
                                      const std::map<std::string, Reference> &refs) {
  DecodeWerReport report;
  for (const auto &[utt, p] : cns) {
    const NBestList &l = Require(nbest, utt, "N-best list");
    const Reference &ref = Require(refs, utt, "reference");
    const std::vector<std::string> ref_words = CanonicalWords(ref.canonical);
    DecodeWerReport::Row row;
    row.utt_id = utt;
    row.one_best_words = l.hyps.front().tokens;
    row.cn_words = CnDecode(p.word);
    row.one_best = Wer(row.one_best_words, ref_words);
    row.cn = Wer(row.cn_words, ref_words);
    Accumulate(&report.one_best_total, row.one_best);
    Accumulate(&report.cn_total, row.cn);
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline nlohmann::json ToJson(const WerResult &r) {
  return {{"substitutions", r.substitutions}, {"insertions", r.insertions},
          {"deletions", r.deletions},         {"errors", r.errors()},
          {"ref_length", r.ref_length},       {"rate", r.rate}};
}

inline nlohmann::json ToJson(const DecodeWerReport &rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto &r : rep.rows)
    rows.push_back({{"utt_id", r.utt_id},
                    {"one_best", ToJson(r.one_best)},
                    {"cn_decode", ToJson(r.cn)},
                    {"one_best_words", r.one_best_words},
                    {"cn_words", r.cn_words}});
  return {{"utterances", rows},
          {"one_best", ToJson(rep.one_best_total)},
          {"cn_decode", ToJson(rep.cn_total)}};
}

inline std::string FormatWerTable(const DecodeWerReport &rep) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "system" << std::right << std::setw(6) << "sub"
     << std::setw(6) << "ins" << std::setw(6) << "del" << std::setw(8) << "words"
     << std::setw(10) << "WER(%)" << '\n';
  auto line = [&](const char *name, const WerResult &r) {
    os << std::left << std::setw(12) << name << std::right << std::setw(6) << r.substitutions
       << std::setw(6) << r.insertions << std::setw(6) << r.deletions << std::setw(8)
       << r.ref_length << std::setw(10) << std::fixed << std::setprecision(2)
       << 100.0 * r.rate << '\n';
  };
  line("1-best", rep.one_best_total);
  line("cn-decode", rep.cn_total);
  return os.str();
}

/// Per-phoneme model input: [cn_gop, cn_gop_margin, word_sr, word_nd,
/// cn_wgop, cn_wgop_margin, lpp..., lpr...]; missing word GOP reads as 0.
inline std::vector<double> PhonemeFeatureVector(const FeatureRow &r) {
  std::vector<double> v{r.cn_gop,
                        r.cn_gop_margin,
                        r.word_sr,
                        r.word_nd,
                        r.cn_wgop.value_or(0.0),
                        r.cn_wgop_margin.value_or(0.0)};
  v.insert(v.end(), r.lpp.begin(), r.lpp.end());
  v.insert(v.end(), r.lpr.begin(), r.lpr.end());
  return v;
}

struct UtteranceFrames {
  std::string utt_id;
  Matrix frames;
};

/// Frame feature records: {"utt_id", "frame_rate"?, "frames": [[...], ...]}.
inline std::map<std::string, UtteranceFrames> ReadFrameFeatures(const std::string &path,
                                                              double frame_rate) {
  std::map<std::string, UtteranceFrames> out;
  for (const auto &j : ReadJsonLines(path)) {
    UtteranceFrames f;
    std::vector<std::vector<double>> rows;
    try {
      f.utt_id = j.at("utt_id").get<std::string>();
      rows = j.at("frames").get<std::vector<std::vector<double>>>();
      if (j.contains("frame_rate") && j["frame_rate"].get<double>() != frame_rate)
        throw Error(path + ": frame rate of " + f.utt_id + " differs from the config");
    } catch (const nlohmann::json::exception &e) {
      throw Error(path + ": malformed frame record: " + e.what());
    }
    if (rows.empty()) throw Error(path + ": " + f.utt_id + " has no frames");
    f.frames.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t].size() != rows.front().size())
        throw Error(path + ": ragged frame matrix for " + f.utt_id);
      for (std::size_t k = 0; k < rows[t].size(); ++k)
        f.frames(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = rows[t][k];
    }
    out.emplace(f.utt_id, std::move(f));
  }
  return out;
}

struct ScoreRecord {
  std::string utt_id;
  double expected_score = 0.0;
  std::vector<double> class_probs;
};

inline Matrix PhonemeMatrix(const FeatureMatrix &fm) {
  if (fm.rows.empty()) throw Error(fm.utt_id + ": no feature rows");
  const std::size_t dim = PhonemeFeatureVector(fm.rows.front()).size();
  Matrix m(static_cast<Eigen::Index>(fm.rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < fm.rows.size(); ++i) {
    std::vector<double> v = PhonemeFeatureVector(fm.rows[i]);
    if (v.size() != dim) throw Error(fm.utt_id + ": inconsistent feature width");
    for (std::size_t k = 0; k < dim; ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[k];
  }
  return m;
}

inline AttentionMask MaskFor(const FeatureMatrix &fm, int num_frames, MaskMode mode) {
  std::vector<int> word_index;
  for (const FeatureRow &r : fm.rows) word_index.push_back(r.word_index);
  std::vector<FrameSpan> spans;
  for (const WordSpan &w : fm.words) spans.push_back(w.span);
  return BuildWordMask(word_index, spans, num_frames, mode);
}

inline std::vector<ScoreRecord> StageScore(const PipelineContext &ctx, const Weights &weights,
                                           const std::vector<FeatureMatrix> &features,
                                           const std::map<std::string, UtteranceFrames> &frames,
                                           int jobs) {
  const MaskMode mode = ParseMaskMode(ctx.config.mask_mode);
  std::vector<ScoreRecord> out(features.size());
  ParallelFor(features.size(), jobs, [&](std::size_t i) {
    const FeatureMatrix &fm = features[i];
    const UtteranceFrames &ff = Require(frames, fm.utt_id, "frame features");
    const Matrix phon = PhonemeMatrix(fm);
    const AttentionMask mask = MaskFor(fm, static_cast<int>(ff.frames.rows()), mode);
    ScoreDistribution dist = Forward(weights, phon, ff.frames, mask);
    out[i] = {fm.utt_id, ExpectedScore(dist, ctx.config.class_values), dist.probs};
  });
  return out;
}

inline std::pair<std::vector<std::string>, std::vector<FeatureMatrix>> ReadFeatures(
    const std::string &path) {
  std::vector<std::string> inventory;
  std::vector<FeatureMatrix> out;
  for (const auto &j : ReadJsonLines(path)) {
    if (j.contains("header")) {
      inventory = j["header"].at("inventory").get<std::vector<std::string>>();
      continue;
    }
    out.push_back(FeaturesFromJson(j));
  }
  std::sort(out.begin(), out.end(),
            [](const auto &a, const auto &b) { return a.utt_id < b.utt_id; });
  return {inventory, out};
}

inline nlohmann::json FrameGopJson(const PosteriorMatrix &m, const PhoneAlignment &align,
                                   const std::vector<FramePhoneFeatures> &feats,
                                   const DurationStats &stats) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const FramePhoneFeatures &f = feats[i];
    rows.push_back({{"phone", align[i].phone},
                    {"t_start", align[i].t_start},
                    {"t_end", align[i].t_end},
                    {"gop", f.gop},
                    {"gop_margin", f.gop_margin},
                    {"lpp", f.lpp},
                    {"lpr", f.lpr},
                    {"sr", f.sr},
                    {"nd", f.nd}});
  }
  return {{"inventory", m.inventory}, {"stats", ToJson(stats)}, {"rows", rows}};
}

// ---------------------------------------------------------------------------
// Command line.

namespace internal {

template <typename T>
std::vector<nlohmann::json> ToRecords(const std::vector<T> &items) {
  std::vector<nlohmann::json> out;
  for (const T &x : items) out.push_back(ToJson(x));
  return out;
}

inline std::vector<nlohmann::json> CnRecords(const std::vector<CnPair> &cns) {
  std::vector<nlohmann::json> out;
  for (const CnPair &p : cns) {
    out.push_back(ToJson(p.word));
    out.push_back(ToJson(p.phone));
  }
  return out;
}

inline std::vector<nlohmann::json> FeatureRecords(const PipelineContext &ctx,
                                                  const std::vector<FeatureMatrix> &fms) {
  std::vector<nlohmann::json> out{
      FeatureHeaderJson(ctx.lex().InventoryVector(), ctx.config.log_floor)};
  for (const FeatureMatrix &fm : fms) out.push_back(ToJson(fm));
  return out;
}

inline std::vector<nlohmann::json> ScoreRecords(const std::vector<ScoreRecord> &scores) {
  std::vector<nlohmann::json> out;
  for (const ScoreRecord &s : scores)
    out.push_back({{"utt_id", s.utt_id},
                   {"expected_score", s.expected_score},
                   {"class_probs", s.class_probs}});
  return out;
}

inline nlohmann::json MetricsJson(const std::vector<ScoreRecord> &scores,
                                  const std::map<std::string, Reference> &refs) {
  std::vector<double> hyp, ref;
  for (const ScoreRecord &s : scores) {
    auto it = refs.find(s.utt_id);
    if (it != refs.end() && it->second.score) {
      hyp.push_back(s.expected_score);
      ref.push_back(*it->second.score);
    }
  }
  if (hyp.size() < 2) return {{"count", hyp.size()}};
  ScoreMetrics m = RoundedPccMse(hyp, ref);
  return {{"count", hyp.size()},
          {"pcc", m.pcc ? nlohmann::json(*m.pcc) : nlohmann::json()},
          {"mse", m.mse}};
}

/// Weights from a file, or freshly initialized from the config seed with
/// feature widths taken from the data.
inline Weights ResolveWeights(const PipelineContext &ctx, const std::string &weights_path,
                              const std::vector<FeatureMatrix> &features,
                              const std::map<std::string, UtteranceFrames> &frames) {
  if (!weights_path.empty()) {
    std::ifstream in = OpenInput(weights_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error &e) {
      throw Error(weights_path + ": malformed weights file: " + e.what());
    }
    return WeightsFromJson(j);
  }
  ModelConfig mc = ctx.config.model;
  if (!features.empty())
    mc.phoneme_feat_dim = static_cast<int>(PhonemeMatrix(features.front()).cols());
  if (!frames.empty()) mc.frame_feat_dim = static_cast<int>(frames.begin()->second.frames.cols());
  return InitWeights(mc);
}

}  // namespace internal

struct DemoOptions {
  std::string data_dir = CNGOP_DEMO_DIR;
  std::string config;  // defaults to <data_dir>/config.json
  std::string out_dir;
  int jobs = 1;
};

/// Runs every stage on the bundled synthetic corpus, writing each stage's
/// output into out_dir.
inline void RunDemo(const DemoOptions &opt, std::ostream &out, std::ostream &err) {
  const fs::path data(opt.data_dir);
  const std::string cfg_path = opt.config.empty() ? (data / "config.json").string() : opt.config;
  fs::create_directories(opt.out_dir);
  const fs::path o(opt.out_dir);
  WarningLog log;
  Warnings lex_warnings;
  PipelineContext ctx(LoadPipelineConfig(cfg_path), &lex_warnings);
  log.Add(lex_warnings);

  std::vector<NBestList> norm = StageNormalize(ctx, (data / "nbest.jsonl").string(), opt.jobs, &log);
  WriteJsonLines((o / "normalized.jsonl").string(), internal::ToRecords(norm));
  const auto nbest = ReadNormalized((o / "normalized.jsonl").string());

  WriteJsonLines((o / "cn.jsonl").string(),
                 internal::CnRecords(StageBuildCn(ctx, nbest, opt.jobs, &log)));
  const auto cns = ReadCns((o / "cn.jsonl").string());

  const auto refs = ReadReferences((data / "refs.jsonl").string(), ctx);
  WriteJsonLines((o / "align.jsonl").string(),
                 internal::ToRecords(StageAlign(ctx, cns, nbest, refs, opt.jobs)));
  const auto aligns = ReadAlignments((o / "align.jsonl").string());

  const DurationStats stats = StageStatsFit(aligns);
  WriteJson((o / "stats.json").string(), ToJson(stats));

  const std::vector<FeatureMatrix> feats = StageFeatures(ctx, cns, aligns, stats, opt.jobs);
  WriteJsonLines((o / "features.jsonl").string(), internal::FeatureRecords(ctx, feats));

  const DecodeWerReport wer = StageDecodeWer(cns, nbest, refs);
  WriteJson((o / "decode_wer.json").string(), ToJson(wer));
  const std::string table = FormatWerTable(wer);
  OpenOutput((o / "decode_wer.txt").string()) << table;
  out << table;

  {
    std::ifstream pin = OpenInput((data / "posteriors.txt").string());
    std::ifstream sin = OpenInput((data / "segments.txt").string());
    PosteriorMatrix pm = ReadPosteriorMatrix(pin, "posteriors.txt");
    PhoneAlignment pa = ReadPhoneAlignment(sin, "segments.txt");
    DurationStats fstats = FitDurationStats(SegmentDurations(pa));
    WriteJson((o / "frame_gop.json").string(),
              FrameGopJson(pm, pa, FrameFeatures(pm, pa, fstats), fstats));
  }

  const auto [inventory, feat_back] = ReadFeatures((o / "features.jsonl").string());
  const auto frames = ReadFrameFeatures((data / "frames.jsonl").string(), ctx.config.frame_rate);
  Weights weights = internal::ResolveWeights(ctx, "", feat_back, frames);
  WriteJson((o / "weights.json").string(), ToJson(weights));
  const std::vector<ScoreRecord> scores = StageScore(ctx, weights, feat_back, frames, opt.jobs);
  WriteJsonLines((o / "scores.jsonl").string(), internal::ScoreRecords(scores));
  WriteJson((o / "metrics.json").string(), internal::MetricsJson(scores, refs));
  log.Flush(err);
  out << "demo outputs written to " << opt.out_dir << '\n';
}

/// Entry point of the `cngop` tool; returns the process exit status.
inline int RunSubcommand(int argc, const char *const *argv, std::ostream &out = std::cout,
                         std::ostream &err = std::cerr) {
  CLI::App app{"Confusion-network pronunciation features and scoring", "cngop"};
  app.require_subcommand(1);
  int jobs = 1;
  std::string config_path;

  auto add_common = [&](CLI::App *sub, bool config_required = true) {
    auto *opt = sub->add_option("--config", config_path, "Pipeline config (JSON)");
    if (config_required) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  };

  std::string in_path, out_path, cn_path, ref_path, nbest_path, align_path, stats_path;
  std::string posteriors_path, segments_path, features_path, frames_path, weights_path,
      save_weights_path, data_dir = CNGOP_DEMO_DIR;
  bool trust_rows = false;

  auto *normalize = app.add_subcommand("normalize", "Normalize and de-duplicate N-best lists");
  add_common(normalize);
  normalize->add_option("--in", in_path, "Raw N-best records")->required()->check(CLI::ExistingFile);
  normalize->add_option("--out", out_path, "Normalized N-best records")->required();

  auto *build_cn = app.add_subcommand("build-cn", "Build word and phoneme confusion networks");
  add_common(build_cn);
  build_cn->add_option("--in", in_path, "Normalized N-best records")->required()->check(CLI::ExistingFile);
  build_cn->add_option("--out", out_path, "Confusion network records")->required();

  auto *align = app.add_subcommand("align", "Align confusion networks to canonical transcripts");
  add_common(align);
  align->add_option("--cn", cn_path)->required()->check(CLI::ExistingFile);
  align->add_option("--nbest", nbest_path, "Normalized N-best records (word timings)")
      ->required()->check(CLI::ExistingFile);
  align->add_option("--ref", ref_path, "Reference transcripts")->required()->check(CLI::ExistingFile);
  align->add_option("--out", out_path)->required();

  auto *stats_fit = app.add_subcommand("stats-fit", "Fit word duration statistics");
  add_common(stats_fit);
  stats_fit->add_option("--align", align_path)->required()->check(CLI::ExistingFile);
  stats_fit->add_option("--out", out_path, "Stats file (default: config stats path)");

  auto *features = app.add_subcommand("features", "Compute per-phoneme feature matrices");
  add_common(features);
  features->add_option("--cn", cn_path)->required()->check(CLI::ExistingFile);
  features->add_option("--align", align_path)->required()->check(CLI::ExistingFile);
  features->add_option("--stats", stats_path, "Stats file (default: config stats path)");
  features->add_option("--out", out_path)->required();

  auto *decode_wer = app.add_subcommand("decode-wer", "Compare CN decoding with the 1-best");
  add_common(decode_wer);
  decode_wer->add_option("--cn", cn_path)->required()->check(CLI::ExistingFile);
  decode_wer->add_option("--nbest", nbest_path)->required()->check(CLI::ExistingFile);
  decode_wer->add_option("--ref", ref_path)->required()->check(CLI::ExistingFile);
  decode_wer->add_option("--out", out_path, "Machine-readable report")->required();

  auto *frame_gop = app.add_subcommand("frame-gop", "Frame-synchronous GOP features");
  add_common(frame_gop, false);
  frame_gop->add_option("--posteriors", posteriors_path)->required()->check(CLI::ExistingFile);
  frame_gop->add_option("--segments", segments_path)->required()->check(CLI::ExistingFile);
  frame_gop->add_option("--stats", stats_path, "Phone duration stats (default: fit on input)");
  frame_gop->add_flag("--trust-rows", trust_rows, "Skip row normalization checks");
  frame_gop->add_option("--out", out_path)->required();

  auto *score = app.add_subcommand("score", "Score utterances with the cross-attention model");
  add_common(score);
  score->add_option("--features", features_path)->required()->check(CLI::ExistingFile);
  score->add_option("--frames", frames_path)->required()->check(CLI::ExistingFile);
  score->add_option("--weights", weights_path, "Weights file (default: init from seed)")
      ->check(CLI::ExistingFile);
  score->add_option("--save-weights", save_weights_path);
  score->add_option("--ref", ref_path, "References with scores, for metrics")->check(CLI::ExistingFile);
  score->add_option("--out", out_path)->required();

  auto *demo = app.add_subcommand("demo", "Run the full chain on the bundled corpus");
  add_common(demo, false);
  demo->add_option("--data", data_dir, "Demo corpus directory")->check(CLI::ExistingDirectory);
  demo->add_option("--out", out_path, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e, out, err);
  }

  try {
    WarningLog log;
    if (demo->parsed()) {
      RunDemo({data_dir, config_path, out_path, jobs}, out, err);
      return 0;
    }
    if (frame_gop->parsed()) {
      std::ifstream pin = OpenInput(posteriors_path);
      std::ifstream sin = OpenInput(segments_path);
      PosteriorMatrix pm = ReadPosteriorMatrix(pin, posteriors_path);
      PhoneAlignment pa = ReadPhoneAlignment(sin, segments_path);
      DurationStats stats;
      if (!stats_path.empty()) {
        std::ifstream s = OpenInput(stats_path);
        stats = StatsFromJson(nlohmann::json::parse(s));
      } else {
        stats = FitDurationStats(SegmentDurations(pa));
      }
      WriteJson(out_path, FrameGopJson(pm, pa, FrameFeatures(pm, pa, stats, !trust_rows), stats));
      return 0;
    }

    Warnings lex_warnings;
    PipelineContext ctx(LoadPipelineConfig(config_path), &lex_warnings);
    log.Add(lex_warnings);
    auto stats_file = [&](const std::string &given) {
      const std::string p = given.empty() ? ctx.config.stats : given;
      if (p.empty()) throw Error("no stats file given and none configured");
      return p;
    };

    if (normalize->parsed()) {
      WriteJsonLines(out_path, internal::ToRecords(StageNormalize(ctx, in_path, jobs, &log)));
    } else if (build_cn->parsed()) {
      WriteJsonLines(out_path,
                     internal::CnRecords(StageBuildCn(ctx, ReadNormalized(in_path), jobs, &log)));
    } else if (align->parsed()) {
      WriteJsonLines(out_path, internal::ToRecords(StageAlign(ctx, ReadCns(cn_path),
                                                             ReadNormalized(nbest_path),
                                                             ReadReferences(ref_path, ctx), jobs)));
    } else if (stats_fit->parsed()) {
      WriteJson(stats_file(out_path), ToJson(StageStatsFit(ReadAlignments(align_path))));
    } else if (features->parsed()) {
      std::ifstream s = OpenInput(stats_file(stats_path));
      nlohmann::json js;
      try {
        js = nlohmann::json::parse(s);
      } catch (const nlohmann::json::parse_error &e) {
        throw Error("malformed stats file: " + std::string(e.what()));
      }
      WriteJsonLines(out_path,
                     internal::FeatureRecords(
                         ctx, StageFeatures(ctx, ReadCns(cn_path), ReadAlignments(align_path),
                                            StatsFromJson(js), jobs)));
    } else if (decode_wer->parsed()) {
      DecodeWerReport rep =
          StageDecodeWer(ReadCns(cn_path), ReadNormalized(nbest_path), ReadReferences(ref_path, ctx));
      WriteJson(out_path, ToJson(rep));
      out << FormatWerTable(rep);
    } else if (score->parsed()) {
      const auto [inventory, feats] = ReadFeatures(features_path);
      const auto frames = ReadFrameFeatures(frames_path, ctx.config.frame_rate);
      Weights weights = internal::ResolveWeights(ctx, weights_path, feats, frames);
      if (!save_weights_path.empty()) WriteJson(save_weights_path, ToJson(weights));
      const std::vector<ScoreRecord> scores = StageScore(ctx, weights, feats, frames, jobs);
      WriteJsonLines(out_path, internal::ScoreRecords(scores));
      if (!ref_path.empty()) out << internal::MetricsJson(scores, ReadReferences(ref_path, ctx)).dump() << '\n';
    }
    log.Flush(err);
  } catch (const Error &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace cngop
