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


// End-to-end training helpers shared by the CLI and the acceptance suite.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "playcont/common.hpp"
#include "playcont/dataset.hpp"
#include "playcont/evaluation.hpp"
#include "playcont/matchnet.hpp"
#include "playcont/sampling.hpp"
#include "playcont/wmf.hpp"

namespace playcont {

// Salts for seeds derived from one master seed.
enum SeedSalt : std::uint64_t {
  kSaltPairs = 1,
  kSaltValidation = 2,
  kSaltInit = 3,
  kSaltTraining = 4,
  kSaltWmfValidation = 5,
};

struct MatchNetRun {
  MatchNet net;
  TrainReport report;
  std::size_t n_train_pairs = 0;
  std::size_t n_val_pairs = 0;
};

struct MatchNetRunOptions {
  double val_fraction = 0.1;
  bool resample_negatives = false;
  std::function<void(std::size_t, double, double)> on_epoch;
};

/// Derives pairs from the training playlists, carves a validation subset
/// of the pairs, and trains a freshly initialised network.
inline MatchNetRun train_matchnet_on(std::span<const Playlist> train_playlists,
                                     const std::vector<SongId>& universe,
                                     const FeatureTable& features, MatchNetConfig config,
                                     std::uint64_t seed, const MatchNetRunOptions& opt = {}) {
  if (!(opt.val_fraction > 0.0 && opt.val_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0,1)");
  }
  config.input_dim = features.dim();
  auto pairs = derive_pairs(train_playlists, universe, mix_seed(seed, kSaltPairs), &features);
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, kSaltValidation));
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(opt.val_fraction * static_cast<double>(pairs.size())));
  n_val = std::max<std::size_t>(1, n_val);
  if (n_val >= pairs.size()) throw InputError("too few pairs to carve a validation set");
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  // Keep derivation order inside each part.
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::vector<LabeledPair> train_pairs, val_pairs;
  for (auto i : train_idx) train_pairs.push_back(pairs[i]);
  for (auto i : val_idx) val_pairs.push_back(pairs[i]);

  MatchNetRun run;
  run.n_train_pairs = train_pairs.size();
  run.n_val_pairs = val_pairs.size();
  run.net = MatchNet::init(config, mix_seed(seed, kSaltInit));
  NegativeRefresh refresh{&universe, train_playlists};
  run.report = train(run.net, train_pairs, val_pairs, features, mix_seed(seed, kSaltTraining),
                     opt.resample_negatives ? &refresh : nullptr, opt.on_epoch);
  return run;
}

/// MAP of WMF on continuations withheld from the training playlists
/// themselves (fit on the remainder).
inline double wmf_validation_map(std::span<const Playlist> train_playlists,
                                 const std::vector<SongId>& universe, const WmfConfig& config,
                                 std::uint64_t seed, double holdout_fraction = 0.2) {
  SplitBundle inner = split_weak(train_playlists, holdout_fraction, mix_seed(seed, kSaltWmfValidation));
  inner.universe.insert(inner.universe.end(), universe.begin(), universe.end());
  detail::collect_universe(inner);
  auto model = als_fit(build_interaction_matrix(inner.train_playlists), config);
  WmfScorer scorer(model);
  return run_experiment(inner, scorer).report.map;
}

struct WmfGridRow {
  double alpha = 0.0;
  double lambda = 0.0;
  double validation_map = 0.0;
};

struct WmfGridResult {
  std::vector<WmfGridRow> rows;
  WmfConfig best;
};

/// Grid over alpha x lambda, selecting the highest validation MAP (first
/// wins on ties).
inline WmfGridResult wmf_grid_search(std::span<const Playlist> train_playlists,
                                     const std::vector<SongId>& universe,
                                     std::span<const double> alphas, std::span<const double> lambdas,
                                     const WmfConfig& base, std::uint64_t seed) {
  WmfGridResult out;
  double best_map = -1.0;
  for (double a : alphas) {
    for (double l : lambdas) {
      WmfConfig c = base;
      c.alpha = a;
      c.lambda = l;
      double map = wmf_validation_map(train_playlists, universe, c, seed);
      out.rows.push_back({a, l, map});
      if (map > best_map) {
        best_map = map;
        out.best = c;
      }
    }
  }
  return out;
}

}  // namespace playcont
