// cngop/text_norm.hpp

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

// Rule-based text normalization of display-formatted ASR output:
// lowercase, punctuation strip, number verbalization, then a script policy
// (basic romanization or hypothesis rejection). Unicode handling is ICU.

#pragma once

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/uscript.h>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cngop/common.hpp"

namespace cngop {

struct NormalizationRules {
  /// Characters replaced by a token break. Empty means every Unicode
  /// punctuation or symbol character.
  std::u32string punctuation;
  /// Characters deleted without breaking the token ("don't" -> "dont").
  std::u32string join_chars = U"'’";
  /// Built-in English verbalizer for 0..999999.
  bool english_numbers = true;
  /// Digit string -> spoken tokens; consulted before the built-in verbalizer.
  std::map<std::string, std::vector<std::string>> number_map;
  /// Applied after compatibility decomposition during romanization; keys
  /// also match their uppercase forms.
  std::map<char32_t, std::string> romanization_map = {
      {U'ß', "ss"}, {U'æ', "ae"}, {U'œ', "oe"},
      {U'ø', "o"},  {U'đ', "d"},  {U'ð', "d"},
      {U'þ', "th"}, {U'ł', "l"},  {U'ı', "i"},
      {U'ŋ', "ng"}, {U'ħ', "h"}};
};

enum class ScriptPolicy { kRomanizeBasic, kDropHypothesis };

namespace internal {

inline icu::UnicodeString ToUnicode(std::string_view s) {
  return icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
}

inline std::string ToUtf8(const icu::UnicodeString &s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

template <typename F>
void ForEachCodePoint(const icu::UnicodeString &s, F &&f) {
  for (int32_t i = 0; i < s.length();) {
    UChar32 c = s.char32At(i);
    f(c);
    i += U16_LENGTH(c);
  }
}

inline bool Contains(const std::u32string &set, UChar32 c) {
  return set.find(static_cast<char32_t>(c)) != std::u32string::npos;
}

inline bool IsPunctuationOrSymbol(UChar32 c) {
  if (u_ispunct(c)) return true;
  switch (u_charType(c)) {
    case U_MATH_SYMBOL:
    case U_CURRENCY_SYMBOL:
    case U_MODIFIER_SYMBOL:
    case U_OTHER_SYMBOL:
      return true;
    default:
      return false;
  }
}

inline char32_t FirstCodePoint(std::string_view utf8) {
  icu::UnicodeString u = ToUnicode(utf8);
  if (u.length() == 0) throw Error("empty character in normalization rules");
  return static_cast<char32_t>(u.char32At(0));
}

inline std::u32string ToU32(std::string_view utf8) {
  std::u32string out;
  ForEachCodePoint(ToUnicode(utf8), [&](UChar32 c) {
    if (!u_isUWhiteSpace(c)) out.push_back(static_cast<char32_t>(c));
  });
  return out;
}

inline const char *kOnes[] = {
    "zero",    "one",     "two",       "three",    "four",
    "five",    "six",     "seven",     "eight",    "nine",
    "ten",     "eleven",  "twelve",    "thirteen", "fourteen",
    "fifteen", "sixteen", "seventeen", "eighteen", "nineteen"};
inline const char *kTens[] = {"",      "",      "twenty",  "thirty", "forty",
                              "fifty", "sixty", "seventy", "eighty", "ninety"};

inline void VerbalizeBelowThousand(int n, std::vector<std::string> *out) {
  if (n >= 100) {
    out->emplace_back(kOnes[n / 100]);
    out->emplace_back("hundred");
    n %= 100;
    if (n == 0) return;
  }
  if (n < 20) {
    out->emplace_back(kOnes[n]);
  } else {
    out->emplace_back(kTens[n / 10]);
    if (n % 10) out->emplace_back(kOnes[n % 10]);
  }
}

}  // namespace internal

/// Spoken English form of 0..999999; throws for anything else.
inline std::vector<std::string> VerbalizeEnglish(std::string_view digits) {
  std::size_t first = digits.find_first_not_of('0');
  std::string_view sig =
      first == std::string_view::npos ? std::string_view{} : digits.substr(first);
  if (digits.empty() || sig.size() > 6 ||
      digits.find_first_not_of("0123456789") != std::string_view::npos)
    throw Error("number outside verbalizer range: " + std::string(digits));
  int value = sig.empty() ? 0 : std::stoi(std::string(sig));
  std::vector<std::string> out;
  if (value >= 1000) {
    internal::VerbalizeBelowThousand(value / 1000, &out);
    out.emplace_back("thousand");
    if (value % 1000) internal::VerbalizeBelowThousand(value % 1000, &out);
  } else {
    internal::VerbalizeBelowThousand(value, &out);
  }
  return out;
}

/// Loads "key = value" rules. Keys: punctuation, join, numbers
/// (english|none), number_map (path, relative to the rules file), map
/// (repeatable: "map = <char> <replacement>").
inline NormalizationRules LoadNormalizationRules(const std::string &path) {
  NormalizationRules rules;
  std::ifstream in = OpenInput(path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = Trim(line);
    if (view.empty() || view.front() == '#') continue;
    std::size_t eq = view.find('=');
    if (eq == std::string_view::npos)
      throw Error(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key(Trim(view.substr(0, eq)));
    std::string value(Trim(view.substr(eq + 1)));
    if (key == "punctuation") {
      rules.punctuation = internal::ToU32(value);
    } else if (key == "join") {
      rules.join_chars = internal::ToU32(value);
    } else if (key == "numbers") {
      if (value != "english" && value != "none")
        throw Error(path + ":" + std::to_string(lineno) +
                    ": numbers must be english or none");
      rules.english_numbers = value == "english";
    } else if (key == "number_map") {
      std::filesystem::path map_path(value);
      if (map_path.is_relative())
        map_path = std::filesystem::path(path).parent_path() / map_path;
      std::ifstream map_in = OpenInput(map_path.string());
      std::string entry;
      int map_line = 0;
      while (std::getline(map_in, entry)) {
        ++map_line;
        if (Trim(entry).empty()) continue;
        std::size_t tab = entry.find('\t');
        if (tab == std::string::npos)
          throw Error(map_path.string() + ":" + std::to_string(map_line) +
                      ": expected NUMBER<TAB>words");
        rules.number_map[std::string(Trim(entry.substr(0, tab)))] =
            SplitWhitespace(entry.substr(tab + 1));
      }
    } else if (key == "map") {
      std::vector<std::string> parts = SplitWhitespace(value);
      if (parts.size() != 2)
        throw Error(path + ":" + std::to_string(lineno) +
                    ": map expects <char> <replacement>");
      rules.romanization_map[internal::FirstCodePoint(parts[0])] = parts[1];
    } else {
      throw Error(path + ":" + std::to_string(lineno) + ": unknown key '" +
                  key + "'");
    }
  }
  return rules;
}

inline std::string ToLowerUtf8(std::string_view text) {
  icu::UnicodeString u = internal::ToUnicode(text);
  u.toLower(icu::Locale::getRoot());
  return internal::ToUtf8(u);
}

/// Lowercase, strip punctuation, verbalize digit runs. Deterministic and
/// idempotent on its own output.
inline std::vector<std::string> NormalizeText(std::string_view text,
                                              const NormalizationRules &rules) {
  icu::UnicodeString lower = internal::ToUnicode(text);
  lower.toLower(icu::Locale::getRoot());

  // Digit runs become standalone tokens so "2nd" verbalizes its number.
  icu::UnicodeString spaced;
  int prev_kind = 0;  // 0 break, 1 digit, 2 other
  internal::ForEachCodePoint(lower, [&](UChar32 c) {
    if (internal::Contains(rules.join_chars, c)) return;
    bool punct = rules.punctuation.empty()
                     ? internal::IsPunctuationOrSymbol(c)
                     : internal::Contains(rules.punctuation, c);
    if (punct || u_isUWhiteSpace(c)) {
      spaced.append(static_cast<UChar32>(' '));
      prev_kind = 0;
      return;
    }
    int kind = u_isdigit(c) ? 1 : 2;
    if (prev_kind != 0 && kind != prev_kind) spaced.append(static_cast<UChar32>(' '));
    spaced.append(c);
    prev_kind = kind;
  });

  std::vector<std::string> tokens;
  for (const std::string &raw : SplitWhitespace(internal::ToUtf8(spaced))) {
    icu::UnicodeString u = internal::ToUnicode(raw);
    if (!u_isdigit(u.char32At(0))) {
      tokens.push_back(raw);
      continue;
    }
    std::string ascii;
    internal::ForEachCodePoint(u, [&](UChar32 c) {
      ascii.push_back(static_cast<char>('0' + u_charDigitValue(c)));
    });
    std::vector<std::string> words;
    if (auto it = rules.number_map.find(ascii); it != rules.number_map.end()) {
      words = it->second;
    } else if (rules.english_numbers) {
      try {
        words = VerbalizeEnglish(ascii);
      } catch (const Error &) {
        throw Error("number outside verbalizer range: " + raw);
      }
    } else {
      throw Error("no verbalization for number: " + raw);
    }
    tokens.insert(tokens.end(), words.begin(), words.end());
  }
  return tokens;
}

/// Resolves an ICU script name ("Latin", "Tamil", "Latn", ...).
inline UScriptCode ParseScript(const std::string &name) {
  int32_t code = u_getPropertyValueEnum(UCHAR_SCRIPT, name.c_str());
  if (code == UCHAR_INVALID_CODE) throw Error("unknown script: " + name);
  return static_cast<UScriptCode>(code);
}

/// True when every code point belongs to `script` (combining marks of the
/// Inherited script are accepted).
inline bool InScript(std::string_view token, UScriptCode script) {
  bool ok = true;
  internal::ForEachCodePoint(internal::ToUnicode(token), [&](UChar32 c) {
    UErrorCode ec = U_ZERO_ERROR;
    UScriptCode s = uscript_getScript(c, &ec);
    if (U_FAILURE(ec) || (s != script && s != USCRIPT_INHERITED)) ok = false;
  });
  return ok;
}

/// Compatibility decomposition, diacritic strip, character map, lowercase.
inline std::string Romanize(std::string_view token,
                            const NormalizationRules &rules) {
  UErrorCode ec = U_ZERO_ERROR;
  const icu::Normalizer2 *nfkd = icu::Normalizer2::getNFKDInstance(ec);
  if (U_FAILURE(ec)) throw Error("ICU NFKD normalizer unavailable");
  icu::UnicodeString decomposed = nfkd->normalize(internal::ToUnicode(token), ec);
  if (U_FAILURE(ec)) throw Error("cannot decompose token: " + std::string(token));
  icu::UnicodeString out;
  internal::ForEachCodePoint(decomposed, [&](UChar32 c) {
    if (u_charType(c) == U_NON_SPACING_MARK) return;
    auto it = rules.romanization_map.find(static_cast<char32_t>(c));
    if (it == rules.romanization_map.end())  // map keys match either case
      it = rules.romanization_map.find(static_cast<char32_t>(u_tolower(c)));
    if (it != rules.romanization_map.end())
      out.append(internal::ToUnicode(it->second));
    else
      out.append(c);
  });
  out.toLower(icu::Locale::getRoot());
  return internal::ToUtf8(out);
}

/// Returns nullopt when the hypothesis is rejected (drop policy only).
/// Romanization is meant for Latin targets; tokens still outside the script
/// afterwards are dropped.
inline std::optional<std::vector<std::string>> ApplyScriptPolicy(
    const std::vector<std::string> &tokens, ScriptPolicy policy,
    UScriptCode target, const NormalizationRules &rules) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const std::string &tok : tokens) {
    if (policy == ScriptPolicy::kDropHypothesis) {
      if (!InScript(tok, target)) return std::nullopt;
      out.push_back(tok);
    } else {
      std::string rom = Romanize(tok, rules);
      if (!rom.empty() && InScript(rom, target)) out.push_back(std::move(rom));
    }
  }
  return out;
}

inline ScriptPolicy ParseScriptPolicy(const std::string &name) {
  if (name == "romanize_basic") return ScriptPolicy::kRomanizeBasic;
  if (name == "drop_hypothesis") return ScriptPolicy::kDropHypothesis;
  throw Error("unknown script policy: " + name);
}

}  // namespace cngop
