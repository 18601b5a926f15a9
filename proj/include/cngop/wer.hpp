// cngop/wer.hpp

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
#include <string>
#include <vector>

#include "cngop/common.hpp"

namespace cngop {

struct WerResult {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  int ref_length = 0;
  double rate = 0.0;

  int errors() const { return substitutions + insertions + deletions; }
};

/// Unit-cost Levenshtein alignment of hyp against ref. Among optimal edit
/// scripts the breakdown prefers substitutions, then deletions.
template <typename T>
WerResult Wer(const std::vector<T> &hyp, const std::vector<T> &ref) {
  if (ref.empty()) throw Error("WER needs a non-empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  // dist[i][j]: edits turning hyp[..j) into ref[..i)
  std::vector<std::vector<int>> dist(n + 1, std::vector<int>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) dist[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) dist[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      dist[i][j] = std::min({dist[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1),
                             dist[i - 1][j] + 1, dist[i][j - 1] + 1});

  WerResult r;
  r.ref_length = static_cast<int>(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        dist[i][j] == dist[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++r.substitutions;
      --i;
      --j;
    } else if (i > 0 && dist[i][j] == dist[i - 1][j] + 1) {
      ++r.deletions;
      --i;
    } else {
      ++r.insertions;
      --j;
    }
  }
  r.rate = static_cast<double>(r.errors()) / static_cast<double>(n);
  return r;
}

}  // namespace cngop
