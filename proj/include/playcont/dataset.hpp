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

// Playlist collections and song feature tables: file formats, filtering,
// weak/strong evaluation splits and a clustered synthetic generator.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "playcont/common.hpp"

namespace playcont {

/// A playlist regarded as a set of songs. `songs` keeps the file order
/// only so that iteration is reproducible.
struct Playlist {
  std::string id;
  std::vector<SongId> songs;
  std::map<SongId, std::string> artists;

  std::size_t size() const { return songs.size(); }
  bool operator==(const Playlist&) const = default;
};

inline std::vector<SongId> sorted_songs(const Playlist& p) {
  std::vector<SongId> out = p.songs;
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Playlist file: `<playlist_id>\t<song>:<artist>,<song>:<artist>,...`

struct PlaylistFile {
  std::vector<Playlist> playlists;
  std::size_t duplicates_collapsed = 0;
};

inline PlaylistFile read_playlists(std::istream& in,
                                   const std::string& source = "<stream>") {
  PlaylistFile out;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 2) {
      throw ParseError(source, lineno,
                       "expected 2 tab-separated fields, got " +
                           std::to_string(fields.size()));
    }
    Playlist p;
    p.id = fields[0];
    if (!valid_token(p.id)) throw ParseError(source, lineno, "bad playlist id");
    if (!seen_ids.insert(p.id).second) {
      throw ParseError(source, lineno, "duplicate playlist id '" + p.id + "'");
    }
    if (fields[1].empty()) {
      throw ParseError(source, lineno, "empty playlist '" + p.id + "'");
    }
    for (const auto& entry : split(fields[1], ',')) {
      auto colon = entry.find(':');
      if (colon == std::string::npos) {
        throw ParseError(source, lineno, "expected song:artist, got '" + entry + "'");
      }
      std::string song = entry.substr(0, colon);
      std::string artist = entry.substr(colon + 1);
      if (!valid_token(song) || !valid_token(artist)) {
        throw ParseError(source, lineno, "bad song or artist id in '" + entry + "'");
      }
      if (p.artists.contains(song)) {
        ++out.duplicates_collapsed;
        continue;
      }
      p.artists.emplace(song, artist);
      p.songs.push_back(std::move(song));
    }
    out.playlists.push_back(std::move(p));
  }
  return out;
}

inline PlaylistFile load_playlists(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open playlist file '" + path.string() + "'");
  return read_playlists(in, path.string());
}

inline void write_playlists(std::ostream& out, std::span<const Playlist> playlists) {
  for (const auto& p : playlists) {
    out << p.id << '\t';
    for (std::size_t i = 0; i < p.songs.size(); ++i) {
      if (i) out << ',';
      out << p.songs[i] << ':' << p.artists.at(p.songs[i]);
    }
    out << '\n';
  }
}

inline void save_playlists(const std::filesystem::path& path,
                           std::span<const Playlist> playlists) {
  std::ostringstream ss;
  write_playlists(ss, playlists);
  write_file(path, ss.str());
}

// ---------------------------------------------------------------------------
// Feature table

/// Song id -> D-dimensional finite vector. Rows are stored contiguously in
/// insertion order.
class FeatureTable {
 public:
  FeatureTable() = default;
  explicit FeatureTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ConfigError("feature dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<SongId>& songs() const { return ids_; }

  void add(const SongId& song, std::span<const double> values) {
    if (!valid_token(song)) throw InputError("bad song id '" + song + "'");
    if (values.size() != dim_) {
      throw InputError("song '" + song + "' has " + std::to_string(values.size()) +
                       " values, expected D=" + std::to_string(dim_));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw InputError("non-finite feature for song '" + song + "'");
    }
    if (!index_.emplace(song, ids_.size()).second) {
      throw InputError("duplicate song id '" + song + "' in feature table");
    }
    ids_.push_back(song);
    data_.insert(data_.end(), values.begin(), values.end());
  }

  bool contains(const SongId& song) const { return index_.contains(song); }

  std::optional<std::size_t> find(const SongId& song) const {
    auto it = index_.find(song);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(const SongId& song) const {
    auto it = index_.find(song);
    if (it == index_.end()) throw MissingFeatureError(song);
    return it->second;
  }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<const double> row(const SongId& song) const { return row(index_of(song)); }

  const std::vector<double>& data() const { return data_; }

  bool operator==(const FeatureTable& o) const {
    return dim_ == o.dim_ && ids_ == o.ids_ && data_ == o.data_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<SongId> ids_;
  std::unordered_map<SongId, std::size_t> index_;
  std::vector<double> data_;
};

inline FeatureTable read_features(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError(source, 1, "missing D=<int> header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("D=", 0) != 0) throw ParseError(source, 1, "expected D=<int> header");
  long dim = 0;
  {
    auto digits = std::string_view(line).substr(2);
    auto res = std::from_chars(digits.data(), digits.data() + digits.size(), dim);
    if (res.ec != std::errc() || res.ptr != digits.data() + digits.size() || dim <= 0) {
      throw ParseError(source, 1, "bad dimension '" + std::string(digits) + "'");
    }
  }
  FeatureTable table(static_cast<std::size_t>(dim));
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(source, lineno, "expected <song>\\t<values>");
    std::string song = line.substr(0, tab);
    values.clear();
    try {
      for (const auto& tok : split(std::string_view(line).substr(tab + 1), ' ')) {
        if (tok.empty()) continue;
        values.push_back(parse_double(tok));
      }
      table.add(song, values);
    } catch (const ParseError&) {
      throw;
    } catch (const InputError& e) {
      throw ParseError(source, lineno, e.what());
    }
  }
  return table;
}

inline FeatureTable load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open feature file '" + path.string() + "'");
  return read_features(in, path.string());
}

inline void write_features(std::ostream& out, const FeatureTable& table) {
  out << "D=" << table.dim() << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.songs()[i] << '\t';
    auto r = table.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) out << ' ';
      out << format_double(r[j]);
    }
    out << '\n';
  }
}

inline void save_features(const std::filesystem::path& path, const FeatureTable& table) {
  std::ostringstream ss;
  write_features(ss, table);
  write_file(path, ss.str());
}

// ---------------------------------------------------------------------------
// Filtering

struct FilterOptions {
  int min_artists = 7;
  int max_per_artist = 2;
  int min_linked = 14;
  int min_final = 5;
};

struct FilterStats {
  std::size_t input = 0;
  std::size_t rejected_artists = 0;      // rule 1
  std::size_t rejected_short = 0;        // rule 2
  std::size_t songs_without_features = 0;  // rule 3, songs dropped
  std::size_t rejected_final = 0;        // rule 4
  std::size_t output = 0;
};

struct FilterResult {
  std::vector<Playlist> playlists;
  FilterStats stats;
};

/// Applies, in order: artist diversity, minimum length, dropping unfeatured
/// songs, minimum final length. Output keeps input order.
inline FilterResult filter_collection(std::span<const Playlist> playlists,
                                      const FeatureTable& features,
                                      const FilterOptions& opt = {}) {
  FilterResult out;
  out.stats.input = playlists.size();
  for (const auto& p : playlists) {
    std::map<std::string, int> per_artist;
    for (const auto& s : p.songs) ++per_artist[p.artists.at(s)];
    int max_count = 0;
    for (const auto& [artist, n] : per_artist) max_count = std::max(max_count, n);
    if (static_cast<int>(per_artist.size()) < opt.min_artists || max_count > opt.max_per_artist) {
      ++out.stats.rejected_artists;
      continue;
    }
    if (static_cast<int>(p.songs.size()) < opt.min_linked) {
      ++out.stats.rejected_short;
      continue;
    }
    Playlist kept;
    kept.id = p.id;
    for (const auto& s : p.songs) {
      if (features.contains(s)) {
        kept.songs.push_back(s);
        kept.artists.emplace(s, p.artists.at(s));
      } else {
        ++out.stats.songs_without_features;
      }
    }
    if (static_cast<int>(kept.songs.size()) < opt.min_final) {
      ++out.stats.rejected_final;
      continue;
    }
    out.playlists.push_back(std::move(kept));
  }
  out.stats.output = out.playlists.size();
  return out;
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitMode { weak, strong };

inline std::string to_string(SplitMode m) { return m == SplitMode::weak ? "weak" : "strong"; }

inline SplitMode parse_split_mode(std::string_view s) {
  if (s == "weak") return SplitMode::weak;
  if (s == "strong") return SplitMode::strong;
  throw ConfigError("unknown split mode '" + std::string(s) + "'");
}

/// Training playlists, playlists to extend, and their withheld continuations.
struct SplitBundle {
  SplitMode mode = SplitMode::weak;
  std::vector<Playlist> train_playlists;
  std::vector<Playlist> query_playlists;
  std::map<std::string, Playlist> continuations;  // keyed by query playlist id
  std::vector<SongId> universe;                   // sorted, unique
  double playlist_fraction = 0.0;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
};

inline std::size_t holdout_count(std::size_t length, double fraction) {
  auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(length) + 0.5));
  return std::max<std::size_t>(1, k);
}

namespace detail {

inline void check_fraction(double f, const char* what) {
  if (!(f > 0.0 && f < 1.0)) {
    throw ConfigError(std::string(what) + " must lie in (0,1), got " + format_double(f));
  }
}

inline Playlist subset(const Playlist& p, const std::vector<SongId>& songs) {
  Playlist out;
  out.id = p.id;
  out.songs = songs;
  for (const auto& s : songs) out.artists.emplace(s, p.artists.at(s));
  return out;
}

// Withholds a uniformly chosen subset of the playlist; order within each part
// follows the original playlist.
inline std::pair<Playlist, Playlist> withhold(const Playlist& p, double fraction,
                                              std::uint64_t seed) {
  std::size_t k = holdout_count(p.size(), fraction);
  if (k >= p.size()) {
    throw InputError("playlist '" + p.id + "' too short to split (" +
                     std::to_string(p.size()) + " songs)");
  }
  Rng rng(mix_seed(seed, p.id));
  std::vector<std::size_t> idx(p.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> held(p.size(), false);
  for (std::size_t i = 0; i < k; ++i) held[idx[i]] = true;
  std::vector<SongId> kept, withheld;
  for (std::size_t i = 0; i < p.size(); ++i) {
    (held[i] ? withheld : kept).push_back(p.songs[i]);
  }
  return {subset(p, kept), subset(p, withheld)};
}

inline void collect_universe(SplitBundle& b) {
  std::set<SongId> all(b.universe.begin(), b.universe.end());
  for (const auto& p : b.train_playlists) all.insert(p.songs.begin(), p.songs.end());
  for (const auto& p : b.query_playlists) all.insert(p.songs.begin(), p.songs.end());
  for (const auto& [id, c] : b.continuations) all.insert(c.songs.begin(), c.songs.end());
  b.universe.assign(all.begin(), all.end());
}

}  // namespace detail

/// Adds every featured song to the bundle's universe.
inline void extend_universe(SplitBundle& bundle, const FeatureTable& features) {
  bundle.universe.insert(bundle.universe.end(), features.songs().begin(), features.songs().end());
  detail::collect_universe(bundle);
}

inline SplitBundle split_weak(std::span<const Playlist> playlists, double holdout_fraction,
                              std::uint64_t seed) {
  detail::check_fraction(holdout_fraction, "holdout fraction");
  SplitBundle b;
  b.mode = SplitMode::weak;
  b.holdout_fraction = holdout_fraction;
  b.seed = seed;
  for (const auto& p : playlists) {
    auto [kept, withheld] = detail::withhold(p, holdout_fraction, seed);
    b.train_playlists.push_back(kept);
    b.query_playlists.push_back(std::move(kept));
    b.continuations.emplace(p.id, std::move(withheld));
  }
  detail::collect_universe(b);
  return b;
}

inline SplitBundle split_strong(std::span<const Playlist> playlists, double playlist_fraction,
                                double holdout_fraction, std::uint64_t seed) {
  detail::check_fraction(playlist_fraction, "playlist fraction");
  detail::check_fraction(holdout_fraction, "holdout fraction");
  if (playlists.size() < 2) throw InputError("strong split needs at least 2 playlists");
  std::size_t n = playlists.size();
  auto n_query = static_cast<std::size_t>(
      std::ceil(playlist_fraction * static_cast<double>(n) - 1e-9));
  n_query = std::clamp<std::size_t>(n_query, 1, n - 1);

  Rng rng(mix_seed(seed, std::uint64_t{0x5742}));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> is_query(n, false);
  for (std::size_t i = 0; i < n_query; ++i) is_query[idx[i]] = true;

  SplitBundle b;
  b.mode = SplitMode::strong;
  b.playlist_fraction = playlist_fraction;
  b.holdout_fraction = holdout_fraction;
  b.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = playlists[i];
    if (!is_query[i]) {
      b.train_playlists.push_back(p);
      continue;
    }
    auto [kept, withheld] = detail::withhold(p, holdout_fraction, seed);
    b.query_playlists.push_back(std::move(kept));
    b.continuations.emplace(p.id, std::move(withheld));
  }
  detail::collect_universe(b);
  return b;
}

// ---------------------------------------------------------------------------
// Bundle directory: train.pls, query.pls, continuations.pls, universe.txt,
// meta.json.

inline const std::vector<std::string>& bundle_files() {
  static const std::vector<std::string> files = {"train.pls", "query.pls", "continuations.pls",
                                                 "universe.txt", "meta.json"};
  return files;
}

inline void save_bundle(const SplitBundle& b, const std::filesystem::path& dir,
                        const nlohmann::ordered_json& run_config = nlohmann::ordered_json::object()) {
  std::filesystem::create_directories(dir);
  save_playlists(dir / "train.pls", b.train_playlists);
  save_playlists(dir / "query.pls", b.query_playlists);
  std::vector<Playlist> conts;
  for (const auto& q : b.query_playlists) conts.push_back(b.continuations.at(q.id));
  save_playlists(dir / "continuations.pls", conts);
  std::string uni;
  for (const auto& s : b.universe) uni += s + "\n";
  write_file(dir / "universe.txt", uni);
  nlohmann::ordered_json meta;
  meta["mode"] = to_string(b.mode);
  meta["playlist_fraction"] = b.playlist_fraction;
  meta["holdout_fraction"] = b.holdout_fraction;
  meta["seed"] = b.seed;
  meta["n_train"] = b.train_playlists.size();
  meta["n_query"] = b.query_playlists.size();
  meta["universe_size"] = b.universe.size();
  meta["run"] = run_config;
  write_file(dir / "meta.json", meta.dump(2) + "\n");
}

/// CRC-32 over the bundle files in a fixed order.
inline std::uint32_t bundle_checksum(const std::filesystem::path& dir) {
  std::uint32_t crc = 0;
  for (const auto& f : bundle_files()) crc = crc32(read_file(dir / f), crc);
  return crc;
}

inline SplitBundle load_bundle(const std::filesystem::path& dir) {
  SplitBundle b;
  auto meta = nlohmann::json::parse(read_file(dir / "meta.json"), nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) {
    throw InputError("bad meta.json in '" + dir.string() + "'");
  }
  try {
    b.mode = parse_split_mode(meta.at("mode").get<std::string>());
    b.playlist_fraction = meta.at("playlist_fraction").get<double>();
    b.holdout_fraction = meta.at("holdout_fraction").get<double>();
    b.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad meta.json in '" + dir.string() + "': " + e.what());
  }
  b.train_playlists = load_playlists(dir / "train.pls").playlists;
  b.query_playlists = load_playlists(dir / "query.pls").playlists;
  for (auto& c : load_playlists(dir / "continuations.pls").playlists) {
    std::string id = c.id;
    b.continuations.emplace(std::move(id), std::move(c));
  }
  for (const auto& q : b.query_playlists) {
    if (!b.continuations.contains(q.id)) {
      throw InputError("query playlist '" + q.id + "' has no continuation");
    }
  }
  std::istringstream uni(read_file(dir / "universe.txt"));
  std::string line;
  while (std::getline(uni, line)) {
    if (!line.empty()) b.universe.push_back(line);
  }
  detail::collect_universe(b);
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Clustered synthetic collection. Within its home cluster a playlist prefers
/// songs close (in feature space) to a random anchor song, weighted by a
/// per-song log-normal popularity. locality = 0 and popularity_sd = 0 give
/// uniform draws within the cluster.
struct SynthConfig {
  int n_clusters = 5;
  int songs_per_cluster = 200;
  int n_playlists = 400;
  int playlist_len = 20;
  int dim = 32;
  double noise_sd = 0.1;
  double cross_cluster_prob = 0.05;
  double locality = 30.0;       // decay length, in neighbour ranks
  double popularity_sd = 1.0;   // sd of log popularity
  int songs_per_artist = 2;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  std::vector<Playlist> playlists;
  FeatureTable features;
  std::map<SongId, int> song_cluster;
  std::vector<int> playlist_cluster;  // home cluster per playlist
};

inline std::string synth_song_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%05d", i);
  return buf;
}

inline SyntheticData generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n_clusters <= 0 || cfg.songs_per_cluster <= 0 || cfg.n_playlists <= 0 ||
      cfg.playlist_len <= 0 || cfg.dim <= 0 || cfg.songs_per_artist <= 0) {
    throw ConfigError("synthetic generator counts must be positive");
  }
  if (!(cfg.noise_sd >= 0.0)) throw ConfigError("noise_sd must be >= 0");
  if (!(cfg.cross_cluster_prob >= 0.0 && cfg.cross_cluster_prob <= 1.0)) {
    throw ConfigError("cross_cluster_prob must lie in [0,1]");
  }
  if (cfg.locality < 0.0 || cfg.popularity_sd < 0.0) {
    throw ConfigError("locality and popularity_sd must be >= 0");
  }
  const int n_songs = cfg.n_clusters * cfg.songs_per_cluster;
  if (cfg.playlist_len > n_songs) {
    throw ConfigError("playlist_len " + std::to_string(cfg.playlist_len) +
                      " exceeds the " + std::to_string(n_songs) + "-song universe");
  }
  const auto dim = static_cast<std::size_t>(cfg.dim);
  const auto spc = static_cast<std::size_t>(cfg.songs_per_cluster);

  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> centroids(cfg.n_clusters * dim);
  for (int c = 0; c < cfg.n_clusters; ++c) {
    double norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      double v = normal(rng);
      centroids[c * dim + j] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < dim; ++j) centroids[c * dim + j] /= norm;
  }

  SyntheticData out;
  out.features = FeatureTable(dim);
  std::vector<double> x(dim);
  std::vector<double> vectors(n_songs * dim);
  for (int i = 0; i < n_songs; ++i) {
    int c = i / cfg.songs_per_cluster;
    for (std::size_t j = 0; j < dim; ++j) {
      double noise = cfg.noise_sd > 0.0 ? cfg.noise_sd * normal(rng) : 0.0;
      x[j] = centroids[c * dim + j] + noise;
      vectors[i * dim + j] = x[j];
    }
    out.features.add(synth_song_id(i), x);
    out.song_cluster.emplace(synth_song_id(i), c);
  }
  std::vector<double> popularity(n_songs, 1.0);
  if (cfg.popularity_sd > 0.0) {
    for (auto& w : popularity) w = std::exp(cfg.popularity_sd * normal(rng));
  }

  auto artist_of = [&](int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "a%05d", i / cfg.songs_per_artist);
    return std::string(buf);
  };

  std::vector<double> weight(n_songs);
  std::vector<bool> taken(n_songs);
  // Draws one untaken song of cluster c according to `weight`.
  auto draw_from = [&](int c) -> int {
    int lo = c * cfg.songs_per_cluster, hi = lo + cfg.songs_per_cluster;
    double total = 0.0;
    for (int i = lo; i < hi; ++i) {
      if (!taken[i]) total += weight[i];
    }
    if (total <= 0.0) return -1;
    double u = uniform01(rng) * total;
    int last = -1;
    for (int i = lo; i < hi; ++i) {
      if (taken[i]) continue;
      last = i;
      u -= weight[i];
      if (u < 0.0) return i;
    }
    return last;
  };

  std::vector<std::pair<double, int>> by_distance(spc);
  for (int p = 0; p < cfg.n_playlists; ++p) {
    int home = static_cast<int>(uniform_index(rng, cfg.n_clusters));
    int anchor = home * cfg.songs_per_cluster + static_cast<int>(uniform_index(rng, spc));
    for (int i = 0; i < n_songs; ++i) weight[i] = popularity[i];
    if (cfg.locality > 0.0) {
      for (std::size_t k = 0; k < spc; ++k) {
        int i = home * cfg.songs_per_cluster + static_cast<int>(k);
        double d = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          double diff = vectors[i * dim + j] - vectors[anchor * dim + j];
          d += diff * diff;
        }
        by_distance[k] = {d, i};
      }
      std::sort(by_distance.begin(), by_distance.end());
      for (std::size_t r = 0; r < spc; ++r) {
        weight[by_distance[r].second] *= std::exp(-static_cast<double>(r) / cfg.locality);
      }
    }
    std::fill(taken.begin(), taken.end(), false);
    Playlist pl;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "p%05d", p);
    pl.id = buf;
    for (int slot = 0; slot < cfg.playlist_len; ++slot) {
      int cluster = home;
      if (cfg.n_clusters > 1 && uniform01(rng) < cfg.cross_cluster_prob) {
        int other = static_cast<int>(uniform_index(rng, cfg.n_clusters - 1));
        cluster = other >= home ? other + 1 : other;
      }
      int song = draw_from(cluster);
      // Exhausted cluster: fall back to the next cluster with songs left.
      for (int step = 1; song < 0 && step < cfg.n_clusters; ++step) {
        song = draw_from((cluster + step) % cfg.n_clusters);
      }
      taken[song] = true;
      pl.songs.push_back(synth_song_id(song));
      pl.artists.emplace(pl.songs.back(), artist_of(song));
    }
    out.playlists.push_back(std::move(pl));
    out.playlist_cluster.push_back(home);
  }
  return out;
}

// Songs-per-playlist style summary used by the prepare report.
struct Quartiles {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Quartiles with linear interpolation between order statistics.
inline Quartiles quartiles(std::vector<double> values) {
  Quartiles q;
  if (values.empty()) return q;
  std::sort(values.begin(), values.end());
  auto at = [&](double frac) {
    double pos = frac * static_cast<double>(values.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  q.min = values.front();
  q.q1 = at(0.25);
  q.median = at(0.5);
  q.q3 = at(0.75);
  q.max = values.back();
  return q;
}

}  // namespace playcont
