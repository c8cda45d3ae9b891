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


// Off-line continuation experiment: rank every candidate outside the
// retained playlist, locate the withheld songs, and summarise rank, average
// precision and recall@K, overall and by training frequency.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "playcont/common.hpp"
#include "playcont/dataset.hpp"
#include "playcont/matchnet.hpp"
#include "playcont/ranking.hpp"
#include "playcont/wmf.hpp"

namespace playcont {

inline const std::vector<int> kDefaultCutoffs = {10, 30, 100};
inline const std::vector<std::size_t> kDefaultBucketEdges = {0, 1, 2, 3, 5};

struct ContinuationResult {
  std::string playlist_id;
  std::vector<std::pair<SongId, std::size_t>> ranks;  // withheld song, 1-based rank
  double average_precision = 0.0;
  std::map<int, double> recall_at;
  std::size_t candidate_count = 0;
};

/// Ranks, average precision and recall@K of the withheld songs within a
/// full candidate ranking.
inline ContinuationResult evaluate_continuation(std::span<const SongId> ranked,
                                                std::span<const SongId> withheld,
                                                std::span<const int> cutoffs = kDefaultCutoffs) {
  if (withheld.empty()) throw InputError("empty continuation");
  std::unordered_map<std::string_view, std::size_t> position;
  position.reserve(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (!position.emplace(ranked[i], i + 1).second) {
      throw InputError("duplicate candidate '" + ranked[i] + "' in ranking");
    }
  }
  ContinuationResult r;
  r.candidate_count = ranked.size();
  std::unordered_set<std::string_view> seen;
  std::vector<std::size_t> hits;
  for (const auto& s : withheld) {
    if (!seen.insert(s).second) continue;
    auto it = position.find(s);
    if (it == position.end()) {
      throw InputError("withheld song '" + s + "' is not among the candidates");
    }
    r.ranks.emplace_back(s, it->second);
    hits.push_back(it->second);
  }
  std::sort(hits.begin(), hits.end());
  const auto n = static_cast<double>(hits.size());
  double ap = 0.0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    ap += static_cast<double>(i + 1) / static_cast<double>(hits[i]);
  }
  r.average_precision = ap / n;
  for (int k : cutoffs) {
    auto found = std::count_if(hits.begin(), hits.end(),
                               [k](std::size_t rank) { return rank <= static_cast<std::size_t>(k); });
    r.recall_at[k] = static_cast<double>(found) / n;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Scorers

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string name() const = 0;
  virtual bool supports(SplitMode) const { return true; }
  virtual RankedList rank(const Playlist& query, std::span<const SongId> candidates) const = 0;
};

class RandomScorer : public Scorer {
 public:
  explicit RandomScorer(std::uint64_t seed) : seed_(seed) {}
  std::string name() const override { return "random"; }
  RankedList rank(const Playlist& query, std::span<const SongId> candidates) const override {
    return {random_rank(candidates, mix_seed(seed_, query.id)), {}};
  }

 private:
  std::uint64_t seed_;
};

class WmfScorer : public Scorer {
 public:
  explicit WmfScorer(const WmfModel& model) : model_(model) {}
  std::string name() const override { return "wmf"; }
  bool supports(SplitMode mode) const override { return mode == SplitMode::weak; }
  RankedList rank(const Playlist& query, std::span<const SongId> candidates) const override {
    return wmf_rank(model_, query.id, candidates);
  }

 private:
  const WmfModel& model_;
};

/// Match-network scorer with the song half of g precomputed for every song
/// in the feature table. Scores equal rank_candidates bit for bit.
class MatchNetScorer : public Scorer {
 public:
  MatchNetScorer(const MatchNet& net, const FeatureTable& features) : net_(net), features_(features) {
    if (features.dim() != net.config().input_dim) {
      throw ShapeError("feature table dim does not match model input_dim");
    }
    song_side_.resize(features.size());
    parallel_for(features.size(), [&](std::size_t i) { song_side_[i] = net.song_side(features.row(i)); });
  }

  std::string name() const override { return "matchnet"; }

  RankedList rank(const Playlist& query, std::span<const SongId> candidates) const override {
    if (query.songs.empty()) throw InputError("cannot rank for an empty playlist");
    Matrix x(static_cast<Eigen::Index>(query.size()), static_cast<Eigen::Index>(features_.dim()));
    for (std::size_t t = 0; t < query.size(); ++t) {
      auto row = features_.row(query.songs[t]);
      x.row(static_cast<Eigen::Index>(t)) =
          Eigen::Map<const RowVector>(row.data(), static_cast<Eigen::Index>(row.size()));
    }
    const auto side = net_.playlist_side(x);
    RankedList out;
    out.ranked.reserve(candidates.size());
    for (const auto& s : candidates) {
      out.ranked.push_back({s, net_.head(side, song_side_[features_.index_of(s)])});
    }
    sort_by_score(out.ranked);
    return out;
  }

 private:
  const MatchNet& net_;
  const FeatureTable& features_;
  std::vector<RowVector> song_side_;
};

// ---------------------------------------------------------------------------
// Aggregation

inline double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct BucketRow {
  std::string label;
  std::size_t lo = 0;
  std::optional<std::size_t> hi;  // inclusive; empty for the open top bucket
  std::size_t n = 0;
  double median_rank = std::numeric_limits<double>::quiet_NaN();
  double mean_recall = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
  double median_rank = 0.0;
  double map = 0.0;
  std::map<int, double> mean_recall_at;
  std::size_t n_playlists = 0;
  std::size_t n_withheld = 0;
  int bucket_cutoff = 100;
  std::vector<BucketRow> buckets;
};

struct ExperimentResult {
  EvalReport report;
  std::vector<ContinuationResult> results;
};

/// Median over pooled per-song ranks; MAP and recall averaged per playlist.
inline EvalReport aggregate(std::span<const ContinuationResult> results) {
  EvalReport r;
  r.n_playlists = results.size();
  std::vector<double> pooled;
  for (const auto& c : results) {
    for (const auto& [song, rank] : c.ranks) pooled.push_back(static_cast<double>(rank));
    r.map += c.average_precision;
    for (const auto& [k, v] : c.recall_at) r.mean_recall_at[k] += v;
  }
  r.n_withheld = pooled.size();
  r.median_rank = median(std::move(pooled));
  if (!results.empty()) {
    r.map /= static_cast<double>(results.size());
    for (auto& [k, v] : r.mean_recall_at) v /= static_cast<double>(results.size());
  }
  return r;
}

inline std::unordered_map<SongId, std::size_t> training_frequency(std::span<const Playlist> train) {
  std::unordered_map<SongId, std::size_t> freq;
  for (const auto& p : train) {
    for (const auto& s : p.songs) ++freq[s];
  }
  return freq;
}

inline std::string bucket_label(std::size_t lo, std::optional<std::size_t> hi) {
  if (!hi) return ">=" + std::to_string(lo);
  if (*hi == lo) return std::to_string(lo);
  return std::to_string(lo) + "-" + std::to_string(*hi);
}

/// Groups withheld songs by how many training playlists contain them.
/// `edges` are ascending lower bounds; the last bucket is open-ended.
inline std::vector<BucketRow> bucket_breakdown(
    std::span<const ContinuationResult> results,
    const std::unordered_map<SongId, std::size_t>& frequency,
    std::span<const std::size_t> edges = kDefaultBucketEdges, int recall_cutoff = 100) {
  if (edges.empty() || !std::is_sorted(edges.begin(), edges.end()) ||
      std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw ConfigError("bucket edges must be strictly ascending");
  }
  std::vector<BucketRow> rows(edges.size());
  std::vector<std::vector<double>> ranks(edges.size());
  for (std::size_t b = 0; b < edges.size(); ++b) {
    rows[b].lo = edges[b];
    if (b + 1 < edges.size()) rows[b].hi = edges[b + 1] - 1;
    rows[b].label = bucket_label(rows[b].lo, rows[b].hi);
  }
  for (const auto& c : results) {
    for (const auto& [song, rank] : c.ranks) {
      auto it = frequency.find(song);
      std::size_t f = it == frequency.end() ? 0 : it->second;
      if (f < edges.front()) continue;
      auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), f) - edges.begin()) - 1;
      ranks[b].push_back(static_cast<double>(rank));
    }
  }
  for (std::size_t b = 0; b < edges.size(); ++b) {
    rows[b].n = ranks[b].size();
    if (ranks[b].empty()) continue;
    double hits = 0.0;
    for (double r : ranks[b]) hits += r <= recall_cutoff ? 1.0 : 0.0;
    rows[b].mean_recall = hits / static_cast<double>(ranks[b].size());
    rows[b].median_rank = median(std::move(ranks[b]));
  }
  return rows;
}

/// Candidates for a query: universe minus the retained songs. Other
/// playlists' withheld songs and the playlist's own withheld songs stay in.
inline std::vector<SongId> candidates_for(const std::vector<SongId>& universe, const Playlist& query) {
  std::vector<SongId> retained = sorted_songs(query);
  std::vector<SongId> out;
  out.reserve(universe.size());
  std::set_difference(universe.begin(), universe.end(), retained.begin(), retained.end(),
                      std::back_inserter(out));
  return out;
}

inline ExperimentResult run_experiment(const SplitBundle& bundle, const Scorer& scorer,
                                       std::span<const int> cutoffs = kDefaultCutoffs,
                                       std::span<const std::size_t> bucket_edges = kDefaultBucketEdges,
                                       int bucket_cutoff = 100) {
  if (!scorer.supports(bundle.mode)) {
    throw UnsupportedModeError(scorer.name() + " cannot operate on a " + to_string(bundle.mode) +
                               " generalization bundle");
  }
  ExperimentResult out;
  out.results.resize(bundle.query_playlists.size());
  parallel_for(bundle.query_playlists.size(), [&](std::size_t i) {
    const auto& q = bundle.query_playlists[i];
    auto candidates = candidates_for(bundle.universe, q);
    auto ranking = scorer.rank(q, candidates).order();
    if (ranking.size() != candidates.size()) {
      throw Error(scorer.name() + " returned " + std::to_string(ranking.size()) + " of " +
                  std::to_string(candidates.size()) + " candidates");
    }
    out.results[i] = evaluate_continuation(ranking, bundle.continuations.at(q.id).songs, cutoffs);
    out.results[i].playlist_id = q.id;
  });
  out.report = aggregate(out.results);
  out.report.bucket_cutoff = bucket_cutoff;
  out.report.buckets = bucket_breakdown(out.results, training_frequency(bundle.train_playlists),
                                        bucket_edges, bucket_cutoff);
  return out;
}

// ---------------------------------------------------------------------------
// Report files

enum class ReportFormat { json_lines, csv };

namespace detail {

inline nlohmann::ordered_json rounded(double v) {
  if (!std::isfinite(v)) return nullptr;
  return round_significant(v, 6);
}

inline double unrounded(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline std::string csv_number(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

/// JSON-lines: the aggregate record (with config echo and bucket table)
/// followed by one record per playlist.
inline std::string report_to_jsonl(const ExperimentResult& e, const nlohmann::ordered_json& config) {
  using nlohmann::ordered_json;
  const auto& r = e.report;
  ordered_json agg;
  agg["record"] = "aggregate";
  agg["config"] = config;
  agg["median_rank"] = detail::rounded(r.median_rank);
  agg["map"] = detail::rounded(r.map);
  ordered_json recall = ordered_json::object();
  for (const auto& [k, v] : r.mean_recall_at) recall[std::to_string(k)] = detail::rounded(v);
  agg["mean_recall"] = recall;
  agg["n_playlists"] = r.n_playlists;
  agg["n_withheld"] = r.n_withheld;
  agg["bucket_cutoff"] = r.bucket_cutoff;
  ordered_json buckets = ordered_json::array();
  for (const auto& b : r.buckets) {
    ordered_json row;
    row["bucket"] = b.label;
    row["lo"] = b.lo;
    row["hi"] = b.hi ? ordered_json(*b.hi) : ordered_json(nullptr);
    row["n"] = b.n;
    row["median_rank"] = detail::rounded(b.median_rank);
    row["mean_recall"] = detail::rounded(b.mean_recall);
    buckets.push_back(row);
  }
  agg["buckets"] = buckets;
  std::string out = agg.dump() + "\n";
  for (const auto& c : e.results) {
    ordered_json rec;
    rec["record"] = "playlist";
    rec["playlist_id"] = c.playlist_id;
    rec["candidate_count"] = c.candidate_count;
    rec["average_precision"] = detail::rounded(c.average_precision);
    ordered_json rc = ordered_json::object();
    for (const auto& [k, v] : c.recall_at) rc[std::to_string(k)] = detail::rounded(v);
    rec["recall"] = rc;
    ordered_json ranks = ordered_json::array();
    for (const auto& [song, rank] : c.ranks) ranks.push_back(ordered_json::array({song, rank}));
    rec["ranks"] = ranks;
    out += rec.dump() + "\n";
  }
  return out;
}

/// Per-playlist CSV. Columns: playlist_id, candidate_count, n_withheld,
/// average_precision, recall@K for each cutoff, ranks (song=rank joined by
/// ';').
inline std::string report_to_csv(const ExperimentResult& e) {
  std::vector<int> cutoffs;
  if (!e.results.empty()) {
    for (const auto& [k, v] : e.results.front().recall_at) cutoffs.push_back(k);
  }
  std::string out = "playlist_id,candidate_count,n_withheld,average_precision";
  for (int k : cutoffs) out += ",recall@" + std::to_string(k);
  out += ",ranks\n";
  for (const auto& c : e.results) {
    out += c.playlist_id + "," + std::to_string(c.candidate_count) + "," +
           std::to_string(c.ranks.size()) + "," + detail::csv_number(c.average_precision);
    for (int k : cutoffs) out += "," + detail::csv_number(c.recall_at.at(k));
    out += ",";
    for (std::size_t i = 0; i < c.ranks.size(); ++i) {
      if (i) out += ";";
      out += c.ranks[i].first + "=" + std::to_string(c.ranks[i].second);
    }
    out += "\n";
  }
  return out;
}

inline std::string buckets_to_csv(const EvalReport& r) {
  std::string out = "bucket,lo,hi,n,median_rank,recall@" + std::to_string(r.bucket_cutoff) + "\n";
  for (const auto& b : r.buckets) {
    out += b.label + "," + std::to_string(b.lo) + "," + (b.hi ? std::to_string(*b.hi) : "") + "," +
           std::to_string(b.n) + "," + detail::csv_number(b.median_rank) + "," +
           detail::csv_number(b.mean_recall) + "\n";
  }
  return out;
}

inline void write_report(const ExperimentResult& e, const std::filesystem::path& path,
                         ReportFormat format,
                         const nlohmann::ordered_json& config = nlohmann::ordered_json::object()) {
  write_file(path, format == ReportFormat::json_lines ? report_to_jsonl(e, config) : report_to_csv(e));
}

/// Parses a JSON-lines report back (values carry 6 significant digits).
inline ExperimentResult read_report_jsonl(std::string_view text) {
  ExperimentResult e;
  std::size_t start = 0;
  bool first = true;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (first) {
      if (j.at("record") != "aggregate") throw InputError("report must start with the aggregate record");
      auto& r = e.report;
      r.median_rank = detail::unrounded(j.at("median_rank"));
      r.map = detail::unrounded(j.at("map"));
      for (const auto& [k, v] : j.at("mean_recall").items()) r.mean_recall_at[std::stoi(k)] = detail::unrounded(v);
      r.n_playlists = j.at("n_playlists").get<std::size_t>();
      r.n_withheld = j.at("n_withheld").get<std::size_t>();
      r.bucket_cutoff = j.at("bucket_cutoff").get<int>();
      for (const auto& b : j.at("buckets")) {
        BucketRow row;
        row.label = b.at("bucket").get<std::string>();
        row.lo = b.at("lo").get<std::size_t>();
        if (!b.at("hi").is_null()) row.hi = b.at("hi").get<std::size_t>();
        row.n = b.at("n").get<std::size_t>();
        row.median_rank = detail::unrounded(b.at("median_rank"));
        row.mean_recall = detail::unrounded(b.at("mean_recall"));
        r.buckets.push_back(row);
      }
      first = false;
      continue;
    }
    ContinuationResult c;
    c.playlist_id = j.at("playlist_id").get<std::string>();
    c.candidate_count = j.at("candidate_count").get<std::size_t>();
    c.average_precision = detail::unrounded(j.at("average_precision"));
    for (const auto& [k, v] : j.at("recall").items()) c.recall_at[std::stoi(k)] = detail::unrounded(v);
    for (const auto& pr : j.at("ranks")) {
      c.ranks.emplace_back(pr.at(0).get<std::string>(), pr.at(1).get<std::size_t>());
    }
    e.results.push_back(std::move(c));
  }
  return e;
}

}  // namespace playcont
