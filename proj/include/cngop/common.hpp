// cngop/common.hpp

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

#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cngop {

/// Thrown for every recoverable failure: malformed input, violated
/// preconditions, out-of-range values. The message names the offending input.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reserved empty symbol of a confusion slot.
inline const std::string kEps = "<eps>";
/// Silence phoneme; always part of a lexicon's inventory.
inline const std::string kSil = "SIL";

/// Collected non-fatal diagnostics. When a caller passes no sink the message
/// goes to stderr.
using Warnings = std::vector<std::string>;

inline void Warn(Warnings *sink, std::string msg) {
  if (sink != nullptr)
    sink->push_back(std::move(msg));
  else
    std::cerr << "WARNING: " << msg << '\n';
}

inline std::ifstream OpenInput(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  return in;
}

inline std::ofstream OpenOutput(const std::string &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  return out;
}

/// Splits on ASCII whitespace.
inline std::vector<std::string> SplitWhitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string_view Trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

inline std::string Join(const std::vector<std::string> &parts,
                        std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace cngop
