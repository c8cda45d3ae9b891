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


#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "playcont/sampling.hpp"
#include "oracles.hpp"

namespace playcont {
namespace {

using namespace testing;

std::vector<SongId> letters(const std::string& chars) {
  std::vector<SongId> out;
  for (char c : chars) out.emplace_back(1, c);
  return out;
}

// Smallest k with P(X <= k) >= q for X ~ Binomial(n, p), from the exact pmf.
std::size_t binomial_quantile(std::size_t n, double p, double q) {
  double cdf = 0.0;
  for (std::size_t k = 0; k <= n; ++k) {
    double log_pmf = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                     static_cast<double>(k) * std::log(p) + static_cast<double>(n - k) * std::log1p(-p);
    cdf += std::exp(log_pmf);
    if (cdf >= q) return k;
  }
  return n;
}

TEST(DerivePairs, WorkedExample) {
  std::vector<Playlist> ps = {make_playlist("p1", {"a", "b"})};
  auto pairs = derive_pairs(ps, letters("abc"), 0);
  ASSERT_EQ(pairs.size(), 4u);
  EXPECT_EQ(pairs[0], (LabeledPair{{"b"}, "a", 1, 0}));
  EXPECT_EQ(pairs[1], (LabeledPair{{"b"}, "c", 0, 0}));
  EXPECT_EQ(pairs[2], (LabeledPair{{"a"}, "b", 1, 0}));
  EXPECT_EQ(pairs[3], (LabeledPair{{"a"}, "c", 0, 0}));
}

TEST(DerivePairs, BalancedLeakFreeAndShortened) {
  auto d = generate_synthetic(SynthConfig{.n_clusters = 3, .songs_per_cluster = 30, .n_playlists = 40,
                                          .playlist_len = 12, .dim = 4});
  auto universe = d.features.songs();
  std::sort(universe.begin(), universe.end());
  auto pairs = derive_pairs(d.playlists, universe, 17, &d.features);

  std::size_t total = 0;
  for (const auto& p : d.playlists) total += p.size();
  std::size_t matches = 0, mismatches = 0, violations = 0;
  for (const auto& pr : pairs) {
    const auto& src = d.playlists[pr.source];
    std::set<SongId> full(src.songs.begin(), src.songs.end());
    std::set<SongId> shortened(pr.playlist_songs.begin(), pr.playlist_songs.end());
    EXPECT_EQ(pr.playlist_songs.size(), src.size() - 1);
    EXPECT_EQ(shortened.size(), pr.playlist_songs.size());
    if (shortened.contains(pr.candidate)) ++violations;
    if (pr.label == 1) {
      ++matches;
      shortened.insert(pr.candidate);
      EXPECT_EQ(shortened, full);
    } else {
      ++mismatches;
      if (full.contains(pr.candidate)) ++violations;
    }
  }
  EXPECT_EQ(matches, total);
  EXPECT_EQ(mismatches, total);
  EXPECT_EQ(violations, 0u);
}

TEST(DerivePairs, MismatchFrequenciesWithinExactBinomialInterval) {
  // |S \ p| = 5; the complement enumerated by hand is the uniform oracle.
  const auto universe = letters("abcdef");
  const std::vector<SongId> complement = letters("bcdef");
  const std::size_t n = 10000;
  std::vector<Playlist> ps;
  for (std::size_t i = 0; i < n; ++i) ps.push_back(make_playlist("p" + std::to_string(i), {"a"}));

  auto started = std::chrono::steady_clock::now();
  auto pairs = derive_pairs(ps, universe, 2024);
  std::map<SongId, std::size_t> counts;
  for (const auto& pr : pairs) {
    if (pr.label == 0) ++counts[pr.candidate];
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(), 5.0);

  EXPECT_FALSE(counts.contains("a"));
  const auto lo = binomial_quantile(n, 0.2, 0.0005), hi = binomial_quantile(n, 0.2, 0.9995);
  for (const auto& s : complement) {
    EXPECT_GE(counts[s], lo) << s;
    EXPECT_LE(counts[s], hi) << s;
  }
  EXPECT_LT(chi_square(counts, complement, n), kChiSquare999Df4);
}

TEST(DerivePairs, MismatchUniformOverLargerComplement) {
  std::vector<SongId> universe;
  for (int i = 0; i < 50; ++i) universe.push_back("u" + std::to_string(100 + i));
  std::vector<SongId> members(universe.begin() + 5, universe.begin() + 16);  // 11 songs
  std::vector<SongId> complement;
  for (const auto& s : universe) {
    if (std::find(members.begin(), members.end(), s) == members.end()) complement.push_back(s);
  }
  ASSERT_EQ(complement.size(), 39u);
  std::vector<Playlist> ps;
  for (int i = 0; i < 910; ++i) ps.push_back(make_playlist("q" + std::to_string(i), members));
  auto pairs = derive_pairs(ps, universe, 5);
  std::map<SongId, std::size_t> counts;
  std::size_t n = 0;
  for (const auto& pr : pairs) {
    if (pr.label == 0) {
      ++counts[pr.candidate];
      ++n;
    }
  }
  ASSERT_EQ(n, 910u * 11u);
  for (const auto& m : members) EXPECT_FALSE(counts.contains(m));
  EXPECT_LT(chi_square(counts, complement, n), kChiSquare999Df39);
}

TEST(DerivePairs, DeterministicAndOrderIndependent) {
  std::vector<Playlist> ps = {make_playlist("x", {"a", "b", "c"}), make_playlist("y", {"d", "e"})};
  auto universe = letters("abcdefghij");
  auto a = derive_pairs(ps, universe, 3), b = derive_pairs(ps, universe, 3);
  EXPECT_EQ(a, b);

  std::vector<Playlist> reversed = {ps[1], ps[0]};
  auto r = derive_pairs(reversed, universe, 3);
  // Same pairs per playlist, only the concatenation order changes.
  ASSERT_EQ(r.size(), a.size());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r[i].candidate, a[6 + i].candidate);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r[4 + i].candidate, a[i].candidate);
}

TEST(DerivePairs, Errors) {
  std::vector<Playlist> full = {make_playlist("p", {"a", "b", "c"})};
  EXPECT_THROW(derive_pairs(full, letters("abc"), 1), InputError);
  std::vector<Playlist> stray = {make_playlist("p", {"a", "z"})};
  EXPECT_THROW(derive_pairs(stray, letters("abc"), 1), InputError);

  FeatureTable t(1);
  std::vector<double> v = {0.0};
  t.add("a", v);
  t.add("b", v);
  std::vector<Playlist> ok = {make_playlist("p", {"a"})};
  // Only "c" is unfeatured and it is the only possible mismatch.
  std::vector<Playlist> ab = {make_playlist("p", {"a", "b"})};
  EXPECT_THROW(derive_pairs(ab, letters("abc"), 1, &t), MissingFeatureError);
  std::vector<Playlist> ac = {make_playlist("p", {"a", "c"})};
  EXPECT_THROW(derive_pairs(ac, letters("abc"), 1, &t), MissingFeatureError);
  EXPECT_NO_THROW(derive_pairs(ok, letters("ab"), 1, &t));
}

TEST(ResampleMismatches, SeedStableAndLeakFree) {
  auto d = generate_synthetic(SynthConfig{.n_clusters = 2, .songs_per_cluster = 20, .n_playlists = 15,
                                          .playlist_len = 8, .dim = 3});
  auto universe = d.features.songs();
  std::sort(universe.begin(), universe.end());
  auto pairs = derive_pairs(d.playlists, universe, 1);
  auto a = resample_mismatches(pairs, universe, d.playlists, 99);
  auto b = resample_mismatches(pairs, universe, d.playlists, 99);
  auto c = resample_mismatches(pairs, universe, d.playlists, 100);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].label == 1) {
      EXPECT_EQ(a[i], pairs[i]);
    }
    EXPECT_EQ(a[i].playlist_songs, pairs[i].playlist_songs);
    const auto& src = d.playlists[a[i].source].songs;
    if (a[i].label == 0) {
      EXPECT_EQ(std::find(src.begin(), src.end(), a[i].candidate), src.end());
    }
  }
}

TEST(ResampleMismatches, SingletonComplementNeverChanges) {
  std::vector<Playlist> ps = {make_playlist("p", {"a", "b"})};
  auto universe = letters("abc");
  auto pairs = derive_pairs(ps, universe, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_EQ(resample_mismatches(pairs, universe, ps, seed), pairs);
  }
}

TEST(PairFile, RoundTrip) {
  std::vector<Playlist> ps = {make_playlist("p", {"a", "b", "c"})};
  auto pairs = derive_pairs(ps, letters("abcdef"), 4);
  std::ostringstream out;
  write_pairs(out, pairs);
  std::istringstream in(out.str());
  auto back = read_pairs(in);
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(back[i].label, pairs[i].label);
    EXPECT_EQ(back[i].candidate, pairs[i].candidate);
    EXPECT_EQ(back[i].playlist_songs, pairs[i].playlist_songs);
  }
  std::istringstream bad("2\ta\tb\n");
  EXPECT_THROW(read_pairs(bad), ParseError);
}

}  // namespace
}  // namespace playcont
