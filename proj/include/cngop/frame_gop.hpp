// cngop/frame_gop.hpp

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

// Frame-synchronous GOP features from a per-frame log-posterior matrix and a
// phone time alignment (the hybrid-model baseline path).

#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cngop/cn_features.hpp"
#include "cngop/common.hpp"

namespace cngop {

/// T x |P| log-posteriors, row-major.
struct PosteriorMatrix {
  std::vector<std::string> inventory;
  std::size_t num_frames = 0;
  double frame_rate = 100.0;
  std::vector<double> values;

  double at(std::size_t t, std::size_t p) const {
    return values[t * inventory.size() + p];
  }

  std::size_t PhoneIndex(const std::string &phone) const {
    auto it = std::find(inventory.begin(), inventory.end(), phone);
    if (it == inventory.end()) throw Error("phone '" + phone + "' not in inventory");
    return static_cast<std::size_t>(it - inventory.begin());
  }

  /// Every row must log-sum-exp to 0 within tol.
  void ValidateRows(double tol = 1e-6) const {
    for (std::size_t t = 0; t < num_frames; ++t) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < inventory.size(); ++p) mx = std::max(mx, at(t, p));
      double s = 0.0;
      for (std::size_t p = 0; p < inventory.size(); ++p) s += std::exp(at(t, p) - mx);
      if (std::abs(mx + std::log(s)) > tol)
        throw Error("posterior row " + std::to_string(t) + " is not normalized");
    }
  }
};

struct PhoneSegment {
  std::string phone;
  int64_t t_start = 0;  // inclusive
  int64_t t_end = 0;    // inclusive
};

using PhoneAlignment = std::vector<PhoneSegment>;

/// Mean log-posterior of phone index `rho` over frames t_start..t_end.
inline double Phi(const PosteriorMatrix &m, const PhoneSegment &seg, std::size_t rho) {
  if (seg.t_start < 0 || seg.t_end < seg.t_start ||
      seg.t_end >= static_cast<int64_t>(m.num_frames))
    throw Error("segment [" + std::to_string(seg.t_start) + ", " +
                std::to_string(seg.t_end) + "] outside the posterior matrix");
  double sum = 0.0;
  for (int64_t t = seg.t_start; t <= seg.t_end; ++t)
    sum += m.at(static_cast<std::size_t>(t), rho);
  return sum / static_cast<double>(seg.t_end - seg.t_start + 1);
}

struct FramePhoneFeatures {
  double gop = 0.0;
  double gop_margin = 0.0;
  std::vector<double> lpp;
  std::vector<double> lpr;
  double sr = 0.0;
  double nd = 0.0;
};

/// Segment durations t_end - t_start, the population ND is fitted over.
inline std::vector<double> SegmentDurations(const PhoneAlignment &align) {
  std::vector<double> out;
  for (const PhoneSegment &s : align) out.push_back(static_cast<double>(s.t_end - s.t_start));
  return out;
}

inline void ValidatePhoneAlignment(const PhoneAlignment &align) {
  int64_t prev_end = -1;
  for (const PhoneSegment &s : align) {
    if (s.t_end < s.t_start) throw Error("segment for '" + s.phone + "' ends before it starts");
    if (s.t_start <= prev_end) throw Error("overlapping segment for '" + s.phone + "'");
    prev_end = s.t_end;
  }
}

/// gop = phi(ref); gop_margin = phi(ref) - max phi; lpp = phi over the
/// inventory; lpr = phi(ref) - phi; sr = 1 / max(1, t_e - t_s);
/// nd = (t_e - t_s - mu) / sigma.
inline std::vector<FramePhoneFeatures> FrameFeatures(const PosteriorMatrix &m,
                                                     const PhoneAlignment &align,
                                                     const DurationStats &stats,
                                                     bool validate_rows = true) {
  if (validate_rows) m.ValidateRows();
  ValidatePhoneAlignment(align);
  std::vector<FramePhoneFeatures> out;
  out.reserve(align.size());
  for (const PhoneSegment &seg : align) {
    FramePhoneFeatures f;
    const std::size_t ref = m.PhoneIndex(seg.phone);
    f.lpp.resize(m.inventory.size());
    for (std::size_t p = 0; p < m.inventory.size(); ++p) f.lpp[p] = Phi(m, seg, p);
    f.gop = f.lpp[ref];
    f.gop_margin = f.gop - *std::max_element(f.lpp.begin(), f.lpp.end());
    f.lpr.resize(f.lpp.size());
    for (std::size_t p = 0; p < f.lpp.size(); ++p) f.lpr[p] = f.gop - f.lpp[p];
    const double dur = static_cast<double>(seg.t_end - seg.t_start);
    f.sr = 1.0 / std::max(1.0, dur);
    f.nd = (dur - stats.mu) / stats.sigma;
    out.push_back(std::move(f));
  }
  return out;
}

/// Text format:
///   inventory SIL AA ...
///   frames T
///   frame_rate R
///   T lines of |P| log-posteriors
inline PosteriorMatrix ReadPosteriorMatrix(std::istream &in, const std::string &name) {
  PosteriorMatrix m;
  std::string line;
  auto next_header = [&](const std::string &key) {
    while (std::getline(in, line)) {
      std::vector<std::string> parts = SplitWhitespace(line);
      if (parts.empty()) continue;
      if (parts[0] != key) throw Error(name + ": expected '" + key + "' header");
      parts.erase(parts.begin());
      return parts;
    }
    throw Error(name + ": missing '" + key + "' header");
  };
  m.inventory = next_header("inventory");
  if (m.inventory.empty()) throw Error(name + ": empty inventory");
  auto frames = next_header("frames");
  auto rate = next_header("frame_rate");
  if (frames.size() != 1 || rate.size() != 1) throw Error(name + ": malformed header");
  try {
    m.num_frames = static_cast<std::size_t>(std::stoul(frames[0]));
    m.frame_rate = std::stod(rate[0]);
  } catch (const std::exception &) {
    throw Error(name + ": malformed header");
  }
  m.values.reserve(m.num_frames * m.inventory.size());
  double v;
  while (in >> v) m.values.push_back(v);
  if (!in.eof()) throw Error(name + ": non-numeric posterior value");
  if (m.values.size() != m.num_frames * m.inventory.size())
    throw Error(name + ": expected " + std::to_string(m.num_frames * m.inventory.size()) +
                " values, got " + std::to_string(m.values.size()));
  return m;
}

/// One segment per line: "phone t_s t_e".
inline PhoneAlignment ReadPhoneAlignment(std::istream &in, const std::string &name) {
  PhoneAlignment out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> parts = SplitWhitespace(line);
    if (parts.empty()) continue;
    if (parts.size() != 3)
      throw Error(name + ":" + std::to_string(lineno) + ": expected 'phone t_s t_e'");
    try {
      out.push_back({parts[0], std::stoll(parts[1]), std::stoll(parts[2])});
    } catch (const std::exception &) {
      throw Error(name + ":" + std::to_string(lineno) + ": bad frame index");
    }
  }
  return out;
}

}  // namespace cngop
