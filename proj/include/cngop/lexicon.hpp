// cngop/lexicon.hpp

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

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cngop/common.hpp"
#include "cngop/text_norm.hpp"

namespace cngop {

struct PronEntry {
  std::vector<std::string> phones;
  double prior = 1.0;

  bool operator==(const PronEntry &) const = default;
};

/// One lexicon line; `origin` names it in diagnostics.
struct LexiconEntry {
  std::string word;
  PronEntry pron;
  std::string origin;
};

enum class OovPolicy { kError, kSkipWord };

inline OovPolicy ParseOovPolicy(const std::string &name) {
  if (name == "error") return OovPolicy::kError;
  if (name == "skip_word") return OovPolicy::kSkipWord;
  throw Error("unknown oov policy: " + name);
}

struct LexiconOptions {
  bool use_priors = false;
  std::size_t max_variants = 6;
  /// Allowed phoneme symbols. Empty means "whatever the main lexicon uses".
  std::set<std::string> inventory;
};

/// Word -> pronunciation variants. Immutable after loading.
class Lexicon {
 public:
  Lexicon() { inventory_.insert(kSil); }

  /// Empty span for out-of-vocabulary words.
  std::span<const PronEntry> Lookup(const std::string &word) const {
    auto it = entries_.find(word);
    if (it == entries_.end()) return {};
    return it->second;
  }

  bool Contains(const std::string &word) const { return entries_.count(word) > 0; }

  const std::set<std::string> &inventory() const { return inventory_; }

  /// Inventory in sorted order; the column order of LPP/LPR vectors.
  std::vector<std::string> InventoryVector() const {
    return {inventory_.begin(), inventory_.end()};
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t max_variants() const { return max_variants_; }

 private:
  friend Lexicon BuildLexicon(const std::vector<LexiconEntry> &,
                              const std::vector<LexiconEntry> &,
                              const LexiconOptions &, Warnings *);

  std::map<std::string, std::vector<PronEntry>> entries_;
  std::set<std::string> inventory_;
  std::size_t max_variants_ = 6;
};

namespace internal {

// "WORD<TAB>prior<TAB>ph1 ph2 ..." or "WORD<TAB>ph1 ph2 ...".
inline std::vector<LexiconEntry> ReadLexiconFile(const std::string &path) {
  std::ifstream in = OpenInput(path);
  std::vector<LexiconEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos;
         start = tab + 1)
      fields.push_back(line.substr(start, tab - start));
    fields.push_back(line.substr(start));
    if (fields.size() < 2 || fields.size() > 3)
      throw Error(where + ": expected WORD<TAB>[prior<TAB>]phones");
    LexiconEntry e;
    e.word = ToLowerUtf8(Trim(fields[0]));
    e.origin = where;
    if (fields.size() == 3) {
      char *end = nullptr;
      std::string p(Trim(fields[1]));
      e.pron.prior = std::strtod(p.c_str(), &end);
      if (p.empty() || *end != '\0' || !std::isfinite(e.pron.prior) ||
          e.pron.prior <= 0)
        throw Error(where + ": prior must be a positive number");
    }
    e.pron.phones = SplitWhitespace(fields.back());
    if (e.word.empty() || e.pron.phones.empty())
      throw Error(where + ": empty word or pronunciation");
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace internal

/// Merges main and supplement entries (main wins per word), enforces the
/// inventory, caps variants at max_variants keeping the highest priors, and
/// sets priors: uniform unless `use_priors`, else renormalized per word.
inline Lexicon BuildLexicon(const std::vector<LexiconEntry> &main,
                            const std::vector<LexiconEntry> &supplement,
                            const LexiconOptions &opts,
                            Warnings *warnings = nullptr) {
  if (opts.max_variants == 0) throw Error("max_variants must be positive");
  Lexicon lex;
  lex.max_variants_ = opts.max_variants;
  if (opts.inventory.empty()) {
    for (const auto &e : main)
      lex.inventory_.insert(e.pron.phones.begin(), e.pron.phones.end());
  } else {
    lex.inventory_.insert(opts.inventory.begin(), opts.inventory.end());
  }

  auto add = [&](const std::vector<LexiconEntry> &entries,
                 const std::set<std::string> &blocked) {
    for (const auto &e : entries) {
      if (e.pron.phones.empty()) throw Error(e.origin + ": empty pronunciation");
      if (!(e.pron.prior > 0) || !std::isfinite(e.pron.prior))
        throw Error(e.origin + ": prior must be a positive number");
      for (const std::string &ph : e.pron.phones)
        if (!lex.inventory_.count(ph))
          throw Error(e.origin + ": unknown phoneme '" + ph + "'");
      if (blocked.count(e.word)) continue;
      lex.entries_[e.word].push_back(e.pron);
    }
  };
  add(main, {});
  std::set<std::string> in_main;
  for (const auto &[w, _] : lex.entries_) in_main.insert(w);
  add(supplement, in_main);

  for (auto &[word, prons] : lex.entries_) {
    if (prons.size() > opts.max_variants) {
      Warn(warnings, "word '" + word + "' has " + std::to_string(prons.size()) +
                         " pronunciations; keeping " +
                         std::to_string(opts.max_variants));
      std::vector<std::size_t> order(prons.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return prons[a].prior > prons[b].prior;
      });
      order.resize(opts.max_variants);
      std::sort(order.begin(), order.end());  // back to file order
      std::vector<PronEntry> kept;
      for (std::size_t i : order) kept.push_back(prons[i]);
      prons = std::move(kept);
    }
    double total = 0.0;
    for (const PronEntry &p : prons) total += p.prior;
    for (PronEntry &p : prons)
      p.prior = opts.use_priors ? p.prior / total
                                : 1.0 / static_cast<double>(prons.size());
  }
  return lex;
}

/// Loads the main lexicon and an optional supplement (offline G2P output in
/// the same format).
inline Lexicon LoadLexicon(const std::string &main_path,
                           const std::string &supplement_path,
                           const LexiconOptions &opts,
                           Warnings *warnings = nullptr) {
  std::vector<LexiconEntry> supplement;
  if (!supplement_path.empty())
    supplement = internal::ReadLexiconFile(supplement_path);
  return BuildLexicon(internal::ReadLexiconFile(main_path), supplement, opts,
                      warnings);
}

/// Reads a phone inventory, one symbol per line.
inline std::set<std::string> LoadInventory(const std::string &path) {
  std::ifstream in = OpenInput(path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line))
    for (std::string &s : SplitWhitespace(line)) out.insert(std::move(s));
  return out;
}

/// One pronunciation list per in-vocabulary word.
inline std::vector<std::vector<PronEntry>> WordsToPhonemeExpansions(
    const std::vector<std::string> &words, const Lexicon &lex, OovPolicy policy,
    Warnings *warnings = nullptr) {
  std::vector<std::vector<PronEntry>> out;
  for (const std::string &w : words) {
    std::span<const PronEntry> prons = lex.Lookup(w);
    if (prons.empty()) {
      if (policy == OovPolicy::kError) throw Error("out-of-vocabulary word: " + w);
      Warn(warnings, "skipping out-of-vocabulary word: " + w);
      continue;
    }
    out.emplace_back(prons.begin(), prons.end());
  }
  return out;
}

}  // namespace cngop
