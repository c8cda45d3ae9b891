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


// Collaborative-filtering baselines: weighted matrix factorization for
// binary playlist-song data fit by alternating least squares, and a
// random scorer.
//
// Objective:  sum_{p,s} c_ps (r_ps - u_p . v_s)^2 + lambda (|U|^2 + |V|^2)
// with r_ps = 1 and c_ps = alpha on observed cells, r_ps = 0 and c_ps = 1
// elsewhere.

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "playcont/binary_io.hpp"
#include "playcont/common.hpp"
#include "playcont/dataset.hpp"
#include "playcont/ranking.hpp"

namespace playcont {

struct WmfConfig {
  std::size_t factors = 64;
  double alpha = 40.0;
  double lambda = 0.1;
  std::size_t sweeps = 15;
  std::uint64_t seed = 0;

  void validate() const {
    if (factors < 1) throw ConfigError("wmf factors must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("wmf alpha must be > 0");
    if (!(lambda >= 0.0)) throw ConfigError("wmf lambda must be >= 0");
  }
};

/// Sparse binary playlist x song matrix. Columns are the songs occurring in
/// the playlists, sorted by id.
struct InteractionMatrix {
  std::vector<std::string> playlist_ids;
  std::vector<SongId> song_ids;
  std::unordered_map<std::string, std::size_t> playlist_index;
  std::unordered_map<SongId, std::size_t> song_index;
  std::vector<std::vector<std::uint32_t>> by_playlist;  // sorted song columns per row
  std::vector<std::vector<std::uint32_t>> by_song;      // sorted playlist rows per column

  std::size_t rows() const { return playlist_ids.size(); }
  std::size_t cols() const { return song_ids.size(); }
  std::size_t nonzeros() const {
    std::size_t n = 0;
    for (const auto& r : by_playlist) n += r.size();
    return n;
  }
  bool observed(std::size_t row, std::size_t col) const {
    const auto& r = by_playlist[row];
    return std::binary_search(r.begin(), r.end(), static_cast<std::uint32_t>(col));
  }
};

inline InteractionMatrix build_interaction_matrix(std::span<const Playlist> playlists) {
  if (playlists.empty()) throw InputError("interaction matrix needs at least one playlist");
  InteractionMatrix m;
  std::vector<SongId> songs;
  for (const auto& p : playlists) songs.insert(songs.end(), p.songs.begin(), p.songs.end());
  std::sort(songs.begin(), songs.end());
  songs.erase(std::unique(songs.begin(), songs.end()), songs.end());
  m.song_ids = std::move(songs);
  for (std::size_t j = 0; j < m.song_ids.size(); ++j) m.song_index.emplace(m.song_ids[j], j);
  m.by_song.resize(m.song_ids.size());
  for (std::size_t i = 0; i < playlists.size(); ++i) {
    const auto& p = playlists[i];
    if (!m.playlist_index.emplace(p.id, i).second) {
      throw InputError("duplicate playlist id '" + p.id + "'");
    }
    m.playlist_ids.push_back(p.id);
    std::vector<std::uint32_t> row;
    for (const auto& s : p.songs) row.push_back(static_cast<std::uint32_t>(m.song_index.at(s)));
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    for (auto c : row) m.by_song[c].push_back(static_cast<std::uint32_t>(i));
    m.by_playlist.push_back(std::move(row));
  }
  return m;
}

using FactorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct WmfModel {
  FactorMatrix playlist_factors;
  FactorMatrix song_factors;
  std::vector<std::string> playlist_ids;
  std::vector<SongId> song_ids;
  std::unordered_map<std::string, std::size_t> playlist_index;
  std::unordered_map<SongId, std::size_t> song_index;
  WmfConfig config;

  void rebuild_indices() {
    playlist_index.clear();
    song_index.clear();
    for (std::size_t i = 0; i < playlist_ids.size(); ++i) playlist_index.emplace(playlist_ids[i], i);
    for (std::size_t j = 0; j < song_ids.size(); ++j) song_index.emplace(song_ids[j], j);
  }
};

/// Exact weighted objective, using sum over all cells of (u.v)^2 =
/// sum_p u_p^T (V^T V) u_p plus corrections on observed cells.
inline double wmf_objective(const InteractionMatrix& m, const FactorMatrix& users,
                            const FactorMatrix& items, double alpha, double lambda) {
  Eigen::MatrixXd gram = items.transpose() * items;
  double total = 0.0;
  for (std::size_t p = 0; p < m.rows(); ++p) {
    Eigen::RowVectorXd u = users.row(static_cast<Eigen::Index>(p));
    total += (u * gram * u.transpose()).value();
    for (auto s : m.by_playlist[p]) {
      double x = u.dot(items.row(s));
      total += alpha * (1.0 - x) * (1.0 - x) - x * x;
    }
  }
  return total + lambda * (users.squaredNorm() + items.squaredNorm());
}

/// Exact least-squares update of every row of `target` with `fixed` held:
/// x <- (F^T F + (alpha-1) sum_obs f f^T + lambda I)^-1 alpha sum_obs f.
inline void als_half_sweep(const std::vector<std::vector<std::uint32_t>>& observed,
                           const FactorMatrix& fixed, FactorMatrix& target, double alpha,
                           double lambda) {
  const auto k = fixed.cols();
  const Eigen::MatrixXd gram = fixed.transpose() * fixed;
  std::vector<std::string> failures(observed.size());
  parallel_for(observed.size(), [&](std::size_t row) {
    Eigen::MatrixXd a = gram;
    a.diagonal().array() += lambda;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
    for (auto j : observed[row]) {
      auto f = fixed.row(j).transpose();
      a.noalias() += (alpha - 1.0) * f * f.transpose();
      b.noalias() += alpha * f;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    Eigen::VectorXd x;
    if (llt.info() == Eigen::Success) x = llt.solve(b);
    if (llt.info() != Eigen::Success || !x.allFinite()) {
      failures[row] = "singular normal equations; use lambda > 0";
      return;
    }
    target.row(static_cast<Eigen::Index>(row)) = x.transpose();
  });
  for (const auto& f : failures) {
    if (!f.empty()) throw NumericalError(f);
  }
}

struct AlsTrace {
  std::vector<double> objective;  // after init, then after every half-sweep
};

/// Seeded N(0, 0.01^2) initialisation (playlist factors first), then
/// `sweeps` alternations of playlist and song updates.
inline WmfModel als_fit(const InteractionMatrix& m, const WmfConfig& config,
                        AlsTrace* trace = nullptr) {
  config.validate();
  if (m.rows() == 0 || m.cols() == 0) throw InputError("empty interaction matrix");
  WmfModel model;
  model.config = config;
  model.playlist_ids = m.playlist_ids;
  model.song_ids = m.song_ids;
  model.rebuild_indices();
  const auto k = static_cast<Eigen::Index>(config.factors);
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, 0.01);
  model.playlist_factors.resize(static_cast<Eigen::Index>(m.rows()), k);
  model.song_factors.resize(static_cast<Eigen::Index>(m.cols()), k);
  for (Eigen::Index i = 0; i < model.playlist_factors.size(); ++i) model.playlist_factors.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < model.song_factors.size(); ++i) model.song_factors.data()[i] = normal(rng);
  auto record = [&] {
    if (trace) {
      trace->objective.push_back(wmf_objective(m, model.playlist_factors, model.song_factors,
                                               config.alpha, config.lambda));
    }
  };
  record();
  for (std::size_t sweep = 0; sweep < config.sweeps; ++sweep) {
    als_half_sweep(m.by_playlist, model.song_factors, model.playlist_factors, config.alpha, config.lambda);
    record();
    als_half_sweep(m.by_song, model.playlist_factors, model.song_factors, config.alpha, config.lambda);
    record();
  }
  return model;
}

/// Inner-product scores for candidates with a column; the rest go to the
/// unrankable tail in id order.
inline RankedList wmf_rank(const WmfModel& model, const std::string& playlist_id,
                           std::span<const SongId> candidates) {
  auto it = model.playlist_index.find(playlist_id);
  if (it == model.playlist_index.end()) {
    throw UnsupportedModeError("playlist '" + playlist_id +
                               "' has no WMF factors; WMF only extends training playlists");
  }
  auto u = model.playlist_factors.row(static_cast<Eigen::Index>(it->second));
  RankedList out;
  for (const auto& s : candidates) {
    auto col = model.song_index.find(s);
    if (col == model.song_index.end()) {
      out.unrankable.push_back(s);
    } else {
      out.ranked.push_back({s, u.dot(model.song_factors.row(static_cast<Eigen::Index>(col->second)))});
    }
  }
  sort_by_score(out.ranked);
  std::sort(out.unrankable.begin(), out.unrankable.end());
  return out;
}

/// I.i.d. uniform(0,1) scores.
inline std::vector<ScoredSong> random_rank(std::span<const SongId> candidates, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ScoredSong> out;
  out.reserve(candidates.size());
  for (const auto& s : candidates) out.push_back({s, uniform01(rng)});
  sort_by_score(out);
  return out;
}

// ---------------------------------------------------------------------------
// Model file: "PWMF", u32 header length, header (format_version, factors,
// alpha, lambda, sweeps, seed, n_playlists, n_songs, extras), u32-prefixed
// newline-joined playlist ids and song ids, playlist then song factors as
// little-endian f64 row-major, CRC-32.

inline constexpr std::string_view kWmfMagic = "PWMF";

inline std::string serialize_wmf(const WmfModel& model, const HeaderFields& extra = {}) {
  HeaderFields h = extra;
  h["format_version"] = "1";
  h["factors"] = std::to_string(model.config.factors);
  h["alpha"] = format_double(model.config.alpha);
  h["lambda"] = format_double(model.config.lambda);
  h["sweeps"] = std::to_string(model.config.sweeps);
  h["seed"] = std::to_string(model.config.seed);
  h["n_playlists"] = std::to_string(model.playlist_ids.size());
  h["n_songs"] = std::to_string(model.song_ids.size());
  ByteWriter w;
  w.put_bytes(kWmfMagic);
  w.put_header(h);
  auto put_ids = [&](const std::vector<std::string>& ids) {
    std::string text;
    for (const auto& id : ids) text += id + "\n";
    w.put_u32(static_cast<std::uint32_t>(text.size()));
    w.put_bytes(text);
  };
  put_ids(model.playlist_ids);
  put_ids(model.song_ids);
  w.put_f64s(std::span<const double>(model.playlist_factors.data(), static_cast<std::size_t>(model.playlist_factors.size())));
  w.put_f64s(std::span<const double>(model.song_factors.data(), static_cast<std::size_t>(model.song_factors.size())));
  return w.finish();
}

inline void save_wmf(const WmfModel& model, const std::filesystem::path& path,
                     const HeaderFields& extra = {}) {
  write_file(path, serialize_wmf(model, extra));
}

inline WmfModel deserialize_wmf(std::string_view data) {
  Frame frame = read_frame(data, kWmfMagic);
  if (header_value(frame.header, "format_version") != "1") {
    throw VersionError("unsupported wmf format_version");
  }
  WmfModel m;
  m.config.factors = header_size(frame.header, "factors");
  m.config.alpha = header_double(frame.header, "alpha");
  m.config.lambda = header_double(frame.header, "lambda");
  m.config.sweeps = header_size(frame.header, "sweeps");
  m.config.seed = header_size(frame.header, "seed");
  const auto n_playlists = header_size(frame.header, "n_playlists");
  const auto n_songs = header_size(frame.header, "n_songs");
  ByteReader r(frame.payload);
  auto get_ids = [&](std::size_t expected) {
    auto text = r.get_bytes(r.get_u32());
    std::vector<std::string> ids;
    std::size_t start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) throw FormatError("bad id block");
      ids.emplace_back(text.substr(start, end - start));
      start = end + 1;
    }
    if (ids.size() != expected) throw ShapeError("id count does not match header");
    return ids;
  };
  m.playlist_ids = get_ids(n_playlists);
  m.song_ids = get_ids(n_songs);
  const auto k = m.config.factors;
  if (r.remaining() != (n_playlists + n_songs) * k * 8) {
    throw FormatError(r.remaining() < (n_playlists + n_songs) * k * 8 ? "truncated model file"
                                                                      : "trailing bytes in model file");
  }
  verify_checksum(frame);
  m.playlist_factors.resize(static_cast<Eigen::Index>(n_playlists), static_cast<Eigen::Index>(k));
  m.song_factors.resize(static_cast<Eigen::Index>(n_songs), static_cast<Eigen::Index>(k));
  r.get_f64s(std::span<double>(m.playlist_factors.data(), static_cast<std::size_t>(m.playlist_factors.size())));
  r.get_f64s(std::span<double>(m.song_factors.data(), static_cast<std::size_t>(m.song_factors.size())));
  if (!m.playlist_factors.allFinite() || !m.song_factors.allFinite()) {
    throw FormatError("non-finite factors in model file");
  }
  m.rebuild_indices();
  return m;
}

inline WmfModel load_wmf(const std::filesystem::path& path) { return deserialize_wmf(read_file(path)); }

}  // namespace playcont
