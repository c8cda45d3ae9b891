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


// Balanced playlist-song match / mismatch examples.
//
// Every song s of a playlist p yields the match (p \ {s}, s, 1) and the
// mismatch (p \ {s}, s', 0) where s' is drawn uniformly from S \ p.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "playcont/common.hpp"
#include "playcont/dataset.hpp"

namespace playcont {

struct LabeledPair {
  std::vector<SongId> playlist_songs;  // the shortened playlist
  SongId candidate;
  int label = 0;
  std::size_t source = 0;  // index of the source playlist

  bool operator==(const LabeledPair&) const = default;
};

namespace detail {

// Uniform sampler over universe \ members for one playlist.
class ComplementSampler {
 public:
  ComplementSampler(const std::vector<SongId>& universe, const Playlist& p)
      : universe_(universe) {
    members_.reserve(p.size());
    for (const auto& s : p.songs) {
      auto it = std::lower_bound(universe.begin(), universe.end(), s);
      if (it == universe.end() || *it != s) {
        throw InputError("song '" + s + "' of playlist '" + p.id + "' is not in the universe");
      }
      members_.push_back(static_cast<std::size_t>(it - universe.begin()));
    }
    std::sort(members_.begin(), members_.end());
    if (members_.size() >= universe.size()) {
      throw InputError("playlist '" + p.id + "' covers the whole universe; no mismatch to draw");
    }
  }

  std::size_t complement_size() const { return universe_.size() - members_.size(); }

  const SongId& draw(Rng& rng) const {
    std::size_t r = uniform_index(rng, complement_size());
    // Map the r-th non-member to its universe position.
    for (std::size_t m : members_) {
      if (m <= r) {
        ++r;
      } else {
        break;
      }
    }
    return universe_[r];
  }

 private:
  const std::vector<SongId>& universe_;
  std::vector<std::size_t> members_;
};

inline void check_featured(const FeatureTable* features, const SongId& s) {
  if (features && !features->contains(s)) throw MissingFeatureError(s);
}

}  // namespace detail

/// Matches and mismatches for every (playlist, song). `universe` must be
/// sorted and unique. Each playlist draws from its own substream seeded by
/// (seed, playlist id), so the output does not depend on collection order
/// beyond concatenation. When `features` is given, every emitted song must
/// have a feature vector.
inline std::vector<LabeledPair> derive_pairs(std::span<const Playlist> playlists,
                                             const std::vector<SongId>& universe,
                                             std::uint64_t seed,
                                             const FeatureTable* features = nullptr) {
  std::vector<LabeledPair> out;
  std::size_t total = 0;
  for (const auto& p : playlists) total += p.size();
  out.reserve(2 * total);
  for (std::size_t pi = 0; pi < playlists.size(); ++pi) {
    const auto& p = playlists[pi];
    detail::ComplementSampler sampler(universe, p);
    for (const auto& s : p.songs) detail::check_featured(features, s);
    Rng rng(mix_seed(seed, p.id));
    for (std::size_t i = 0; i < p.size(); ++i) {
      std::vector<SongId> shortened;
      shortened.reserve(p.size() - 1);
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (j != i) shortened.push_back(p.songs[j]);
      }
      const SongId& negative = sampler.draw(rng);
      detail::check_featured(features, negative);
      out.push_back({shortened, p.songs[i], 1, pi});
      out.push_back({std::move(shortened), negative, 0, pi});
    }
  }
  return out;
}

/// Redraws the candidate of every mismatch from universe \ source playlist.
inline std::vector<LabeledPair> resample_mismatches(std::span<const LabeledPair> pairs,
                                                    const std::vector<SongId>& universe,
                                                    std::span<const Playlist> source_playlists,
                                                    std::uint64_t seed,
                                                    const FeatureTable* features = nullptr) {
  std::vector<LabeledPair> out(pairs.begin(), pairs.end());
  std::vector<std::optional<detail::ComplementSampler>> samplers(source_playlists.size());
  std::vector<std::optional<Rng>> rngs(source_playlists.size());
  for (auto& pair : out) {
    if (pair.label != 0) continue;
    if (pair.source >= source_playlists.size()) {
      throw InputError("pair refers to an unknown source playlist");
    }
    const auto& p = source_playlists[pair.source];
    if (!samplers[pair.source]) {
      samplers[pair.source].emplace(universe, p);
      rngs[pair.source].emplace(mix_seed(seed, p.id));
    }
    pair.candidate = samplers[pair.source]->draw(*rngs[pair.source]);
    detail::check_featured(features, pair.candidate);
  }
  return out;
}

// Pair file: `<label>\t<candidate>\t<comma-joined playlist songs>`.

inline void write_pairs(std::ostream& out, std::span<const LabeledPair> pairs) {
  for (const auto& p : pairs) {
    out << p.label << '\t' << p.candidate << '\t';
    for (std::size_t i = 0; i < p.playlist_songs.size(); ++i) {
      if (i) out << ',';
      out << p.playlist_songs[i];
    }
    out << '\n';
  }
}

inline std::vector<LabeledPair> read_pairs(std::istream& in,
                                           const std::string& source = "<stream>") {
  std::vector<LabeledPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 3) throw ParseError(source, lineno, "expected 3 tab-separated fields");
    LabeledPair p;
    if (fields[0] == "1") {
      p.label = 1;
    } else if (fields[0] == "0") {
      p.label = 0;
    } else {
      throw ParseError(source, lineno, "label must be 0 or 1");
    }
    p.candidate = fields[1];
    if (!fields[2].empty()) p.playlist_songs = split(fields[2], ',');
    out.push_back(std::move(p));
  }
  return out;
}

inline void save_pairs(const std::filesystem::path& path, std::span<const LabeledPair> pairs) {
  std::ostringstream ss;
  write_pairs(ss, pairs);
  write_file(path, ss.str());
}

}  // namespace playcont
