// Copyright 2026 The playcont Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "playcont/common.hpp"

namespace playcont {

struct ScoredSong {
  SongId song;
  double score = 0.0;
  bool operator==(const ScoredSong&) const = default;
};

// Descending score, ties by ascending song id.
inline void sort_by_score(std::vector<ScoredSong>& items) {
  std::sort(items.begin(), items.end(), [](const ScoredSong& a, const ScoredSong& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.song < b.song;
  });
}

/// Scored candidates followed by candidates the scorer could not rank
/// (ordered by id).
struct RankedList {
  std::vector<ScoredSong> ranked;
  std::vector<SongId> unrankable;

  std::size_t size() const { return ranked.size() + unrankable.size(); }

  std::vector<SongId> order() const {
    std::vector<SongId> out;
    out.reserve(size());
    for (const auto& s : ranked) out.push_back(s.song);
    out.insert(out.end(), unrankable.begin(), unrankable.end());
    return out;
  }
};

}  // namespace playcont
