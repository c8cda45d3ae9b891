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
#include <numeric>
#include <random>

#include "playcont/matchnet.hpp"
#include "playcont/sampling.hpp"
#include "oracles.hpp"

namespace playcont {
namespace {

using namespace testing;

MatchNetConfig small_config(std::size_t dim = 6) {
  MatchNetConfig c;
  c.input_dim = dim;
  c.hidden_dim = 4;
  c.f_inner_dim = 5;
  c.g_hidden = 4;
  c.dropout_rate = 0.0;
  return c;
}

// ---------------------------------------------------------------------------

TEST(MatchNetConfig, RejectsInvalidValues) {
  auto c = small_config();
  c.hidden_dim = 0;
  EXPECT_THROW(MatchNet::init(c, 1), ConfigError);
  c = small_config();
  c.dropout_rate = 1.0;
  EXPECT_THROW(MatchNet::init(c, 1), ConfigError);
  c = small_config();
  c.input_dim = 0;
  EXPECT_THROW(MatchNet::init(c, 1), ConfigError);
}

TEST(MatchNetConfig, HeaderRoundTrip) {
  auto c = small_config();
  c.learning_rate = 3e-4;
  c.batch_norm = false;
  EXPECT_EQ(MatchNetConfig::from_header(c.to_header()), c);
}

TEST(MatchNet, EqualSeedsGiveEqualParameters) {
  auto a = MatchNet::init(small_config(), 9), b = MatchNet::init(small_config(), 9);
  auto c = MatchNet::init(small_config(), 10);
  EXPECT_EQ(serialize_matchnet(a), serialize_matchnet(b));
  EXPECT_NE(serialize_matchnet(a), serialize_matchnet(c));
}

TEST(MatchNet, DefaultLayerSizes) {
  MatchNetConfig c;
  c.input_dim = 32;
  auto net = MatchNet::init(c, 0);
  const auto& p = net.params();
  ASSERT_EQ(p.f_dense.size(), 2u);
  EXPECT_EQ(p.f_dense[0].weight.rows(), 32);
  EXPECT_EQ(p.f_dense[0].weight.cols(), 256);
  EXPECT_EQ(p.f_dense[1].weight.cols(), 128);
  EXPECT_EQ(p.g_dense.weight.rows(), 256);
  EXPECT_EQ(p.g_dense.weight.cols(), 128);
  EXPECT_EQ(p.out.weight.rows(), 128);
}

TEST(MatchNet, ZeroOutputLayerGivesExactlyOneHalf) {
  auto net = MatchNet::init(small_config(), 2);
  jitter(net, 3);
  net.params().out.weight.setZero();
  net.params().out.bias.setZero();
  Rng rng(4);
  for (auto mode : {MatchNet::Mode::inference, MatchNet::Mode::train}) {
    net.set_mode(mode);
    for (int i = 0; i < 10; ++i) {
      auto x = random_matrix(3, 6, rng, 5.0);
      EXPECT_EQ(net.forward(x, random_vector(6, rng)), 0.5);
    }
  }
}

TEST(MatchNet, UntrainedPredictionsNearOneHalf) {
  MatchNetConfig c;
  c.input_dim = 16;
  auto net = MatchNet::init(c, 5);
  net.set_mode(MatchNet::Mode::inference);
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    double y = net.forward(random_matrix(5, 16, rng), random_vector(16, rng));
    EXPECT_LT(std::abs(y - 0.5), 0.25);
  }
}

TEST(MatchNet, IdenticalRowsPoolToSingleRow) {
  auto net = MatchNet::init(small_config(), 7);
  jitter(net, 8);
  net.set_mode(MatchNet::Mode::inference);
  Rng rng(9);
  auto row = random_matrix(1, 6, rng);
  auto song = random_vector(6, rng);
  Matrix repeated = row.replicate(7, 1);
  EXPECT_EQ(net.forward(repeated, song), net.forward(row, song));
}

TEST(MatchNet, PermutationInvariantExactly) {
  auto net = MatchNet::init(small_config(), 10);
  jitter(net, 11);
  net.set_mode(MatchNet::Mode::inference);
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    auto t = static_cast<Eigen::Index>(2 + uniform_index(rng, 12));
    auto x = random_matrix(t, 6, rng);
    auto s = random_vector(6, rng);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(t));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix xp(t, 6);
    for (Eigen::Index i = 0; i < t; ++i) xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    EXPECT_EQ(net.forward(x, s), net.forward(xp, s));
  }
}

TEST(MatchNet, OutputStaysInOpenUnitInterval) {
  auto net = MatchNet::init(small_config(), 13);
  net.params().out.bias(0) = 40.0;
  net.set_mode(MatchNet::Mode::inference);
  Rng rng(14);
  double y = net.forward(random_matrix(2, 6, rng), random_vector(6, rng));
  EXPECT_GT(y, 0.0);
  EXPECT_LE(y, 1.0);
  EXPECT_TRUE(std::isfinite(bce(y, 0.0)));
}

TEST(MatchNet, RejectsBadInputs) {
  auto net = MatchNet::init(small_config(), 15);
  net.set_mode(MatchNet::Mode::inference);
  Rng rng(16);
  EXPECT_THROW(net.forward(random_matrix(2, 5, rng), random_vector(6, rng)), ShapeError);
  EXPECT_THROW(net.forward(random_matrix(2, 6, rng), random_vector(5, rng)), ShapeError);
  EXPECT_THROW(net.forward(Matrix(0, 6), random_vector(6, rng)), InputError);
  auto bad = random_matrix(2, 6, rng);
  bad(1, 3) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(net.forward(bad, random_vector(6, rng)), InputError);
  auto v = random_vector(6, rng);
  v[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(net.forward(random_matrix(2, 6, rng), v), InputError);
}

// Without batch-norm and dropout the batched training pass must agree with
// the per-row inference path, since nothing couples examples.
TEST(MatchNet, BatchedPathMatchesInferencePathWithoutNorm) {
  auto c = small_config();
  c.batch_norm = false;
  auto net = MatchNet::init(c, 17);
  jitter(net, 18);
  Rng rng(19);
  auto b = random_batch(6, 6, rng);
  auto probs = net.forward_batch(b, true, 0).probs;
  net.set_mode(MatchNet::Mode::inference);
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto lo = static_cast<Eigen::Index>(b.offsets[i]), hi = static_cast<Eigen::Index>(b.offsets[i + 1]);
    Matrix x = b.playlist_rows.middleRows(lo, hi - lo);
    RowVector s = b.song_rows.row(static_cast<Eigen::Index>(i));
    EXPECT_NEAR(net.forward(x, std::span<const double>(s.data(), 6)), probs(static_cast<Eigen::Index>(i)), 1e-12);
  }
}

TEST(MatchNet, InferenceBatchedCostMatchesPerPairPath) {
  auto net = MatchNet::init(small_config(), 20);
  jitter(net, 21);
  net.params().g_norm.running_mean.setConstant(0.2);
  net.params().g_norm.running_var.setConstant(1.7);
  net.set_mode(MatchNet::Mode::inference);
  Rng rng(22);
  auto b = random_batch(5, 6, rng);
  auto probs = net.forward_batch(b, false, 0).probs;
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto lo = static_cast<Eigen::Index>(b.offsets[i]), hi = static_cast<Eigen::Index>(b.offsets[i + 1]);
    Matrix x = b.playlist_rows.middleRows(lo, hi - lo);
    RowVector s = b.song_rows.row(static_cast<Eigen::Index>(i));
    EXPECT_NEAR(net.forward(x, std::span<const double>(s.data(), 6)), probs(static_cast<Eigen::Index>(i)), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Loss and gradients

TEST(Loss, KnownValues) {
  EXPECT_NEAR(bce(0.5, 1.0), 0.693147, 1e-6);
  EXPECT_NEAR(bce(0.5, 0.0), 0.693147, 1e-6);
  EXPECT_NEAR(bce(0.8, 1.0), 0.223144, 1e-6);
  EXPECT_NEAR(bce(0.0, 1.0), -std::log(1e-7), 1e-9);
  Eigen::VectorXd p(2), y(2);
  p << 0.8, 0.3;
  y << 1.0, 0.0;
  auto v = MatchNet::loss_of(p, y);
  double a = -std::log(0.8), b = -std::log(0.7);
  EXPECT_DOUBLE_EQ(v.total, a + b);
  EXPECT_DOUBLE_EQ(v.mean, (a + b) / 2);
  EXPECT_THROW(MatchNet::loss_of(Eigen::VectorXd(0), Eigen::VectorXd(0)), InputError);
}

TEST(Loss, EmptyBatchIsRejected) {
  auto net = MatchNet::init(small_config(), 1);
  Batch b;
  b.playlist_rows.resize(0, 6);
  b.song_rows.resize(0, 6);
  b.offsets = {0};
  EXPECT_THROW(net.loss(b), InputError);
}

TEST(Gradient, MatchesCentralDifferences) {
  auto net = MatchNet::init(small_config(), 23);
  jitter(net, 24);
  Rng rng(25);
  const auto batch = random_batch(5, 6, rng);
  auto g = check_gradient(net, batch);
  EXPECT_LT(g.worst, 1e-4) << "tensor " << g.tensor << " entry " << g.entry << " analytic " << g.analytic
                           << " numeric " << g.numeric;
  EXPECT_EQ(g.checked, parameter_count(net.params()) - 2 * (5 + 4 + 4));
  // Biases feeding a normalisation layer cancel out; only those are zero.
  EXPECT_EQ(g.compared, g.checked - (5 + 4 + 4));
  RecordProperty("worst_relative_error", std::to_string(g.worst));
}

TEST(Gradient, MatchesCentralDifferencesWithoutNorm) {
  auto c = small_config();
  c.batch_norm = false;
  auto net = MatchNet::init(c, 26);
  jitter(net, 27);
  Rng rng(28);
  const auto batch = random_batch(5, 6, rng);
  // Normalisation tensors are unused here; both sides are exactly zero.
  auto g = check_gradient(net, batch);
  EXPECT_LT(g.worst, 1e-4) << "tensor " << g.tensor << " entry " << g.entry;
  EXPECT_LE(g.compared + 2 * (5 + 4 + 4), g.checked);
}

TEST(Gradient, VanishesWhenPredictionsAreClipped) {
  auto net = MatchNet::init(small_config(), 29);
  net.params().out.bias(0) = 60.0;  // probability rounds to 1
  Rng rng(30);
  auto b = random_batch(4, 6, rng);
  b.labels.setOnes();
  auto r = net.backward(b);
  double norm2 = 0.0;
  for_each_learnable(r.gradient, [&](const auto& t) { norm2 += t.squaredNorm(); });
  EXPECT_LT(std::sqrt(norm2), 1e-6);
}

TEST(Gradient, RequiresTrainMode) {
  auto net = MatchNet::init(small_config(), 31);
  net.set_mode(MatchNet::Mode::inference);
  Rng rng(32);
  EXPECT_THROW(net.backward(random_batch(2, 6, rng)), Error);
}

TEST(Gradient, DropoutMasksFollowSeed) {
  auto c = small_config();
  c.dropout_rate = 0.5;
  auto net = MatchNet::init(c, 33);
  Rng rng(34);
  auto b = random_batch(5, 6, rng);
  EXPECT_EQ(net.loss(b, 7).total, net.loss(b, 7).total);
  EXPECT_NE(net.loss(b, 7).total, net.loss(b, 8).total);
}

// ---------------------------------------------------------------------------
// Training

TEST(Training, PatienceZeroRunsOneEpoch) {
  auto f = separable_fixture(10, 1);
  auto c = small_config(4);
  c.patience = 0;
  c.max_epochs = 10;
  auto net = MatchNet::init(c, 2);
  auto r = train(net, f.train, f.val, f.features, 3);
  EXPECT_EQ(r.train_cost.size(), 1u);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST(Training, DeterministicReports) {
  auto f = separable_fixture(10, 4);
  auto c = small_config(4);
  c.max_epochs = 4;
  c.dropout_rate = 0.3;
  auto a = MatchNet::init(c, 5), b = MatchNet::init(c, 5);
  auto ra = train(a, f.train, f.val, f.features, 6);
  auto rb = train(b, f.train, f.val, f.features, 6);
  EXPECT_EQ(ra.train_cost, rb.train_cost);
  EXPECT_EQ(ra.val_cost, rb.val_cost);
  EXPECT_EQ(ra.best_epoch, rb.best_epoch);
  EXPECT_EQ(serialize_matchnet(a), serialize_matchnet(b));
}

TEST(Training, RestoresBestValidationSnapshot) {
  auto f = separable_fixture(12, 7);
  auto c = small_config(4);
  c.max_epochs = 12;
  c.patience = 3;
  c.learning_rate = 0.05;  // noisy on purpose, so later epochs can be worse
  auto net = MatchNet::init(c, 8);
  auto r = train(net, f.train, f.val, f.features, 9);
  ASSERT_GE(r.best_epoch, 1u);
  double best = *std::min_element(r.val_cost.begin(), r.val_cost.end());
  EXPECT_EQ(r.val_cost[r.best_epoch - 1], best);
  EXPECT_EQ(net.mode(), MatchNet::Mode::inference);
  auto val = index_pairs(f.val, f.features);
  EXPECT_DOUBLE_EQ(mean_cost(net, f.features, val), best);
  for (double v : r.val_cost) EXPECT_LE(mean_cost(net, f.features, val), v);
}

TEST(Training, UntrainedCostNearLogTwo) {
  auto f = separable_fixture(400, 10);
  MatchNetConfig c;
  c.input_dim = 4;
  auto net = MatchNet::init(c, 11);
  net.set_mode(MatchNet::Mode::inference);
  auto balanced = balanced_thousand(f.train);
  ASSERT_EQ(balanced.size(), 1000u);
  EXPECT_NEAR(mean_cost(net, f.features, index_pairs(balanced, f.features)), std::log(2.0), 0.05);
}

TEST(Training, LearnsSeparableFixture) {
  auto f = separable_fixture(40, 12);
  auto c = small_config(4);
  c.hidden_dim = 8;
  c.f_inner_dim = 16;
  c.g_hidden = 8;
  c.max_epochs = 200;
  c.patience = 200;
  c.learning_rate = 0.01;
  c.batch_size = 32;
  auto net = MatchNet::init(c, 13);
  auto r = train(net, f.train, f.val, f.features, 14);
  EXPECT_LE(r.val_cost.size(), 200u);
  EXPECT_LT(r.val_cost[r.best_epoch - 1], 0.1);
  EXPECT_LT(mean_cost(net, f.features, index_pairs(f.train, f.features)), 0.1);
}

TEST(Training, DivergenceIsReported) {
  auto f = separable_fixture(10, 15);
  auto c = small_config(4);
  c.learning_rate = 1e308;
  c.max_epochs = 5;
  auto net = MatchNet::init(c, 16);
  EXPECT_THROW(train(net, f.train, f.val, f.features, 17), NumericalError);
}

TEST(Training, RejectsEmptyPairSets) {
  auto f = separable_fixture(4, 18);
  auto net = MatchNet::init(small_config(4), 19);
  EXPECT_THROW(train(net, {}, f.val, f.features, 1), InputError);
  EXPECT_THROW(train(net, f.train, {}, f.features, 1), InputError);
}

TEST(Training, NegativeRefreshKeepsPairsLeakFree) {
  auto f = separable_fixture(10, 20);
  auto c = small_config(4);
  c.max_epochs = 3;
  c.patience = 3;
  auto net = MatchNet::init(c, 21);
  std::vector<SongId> universe = f.features.songs();
  std::sort(universe.begin(), universe.end());
  // Rebuild the sources the fixture used so the refresh can resample.
  std::vector<Playlist> sources(10);
  for (const auto& p : f.train) {
    if (p.label != 1) continue;
    auto& s = sources[p.source];
    if (s.songs.empty()) {
      s.id = "pl" + std::to_string(p.source);
      s.songs = p.playlist_songs;
      s.songs.push_back(p.candidate);
      for (const auto& x : s.songs) s.artists[x] = "a";
    }
  }
  NegativeRefresh refresh{&universe, sources};
  auto r = train(net, f.train, f.val, f.features, 22, &refresh);
  EXPECT_EQ(r.train_cost.size(), 3u);
}

// ---------------------------------------------------------------------------
// Ranking

TEST(RankCandidates, SingleCandidateAndDeterminism) {
  auto features = random_features(30, 6, 1);
  auto net = MatchNet::init(small_config(), 2);
  net.set_mode(MatchNet::Mode::inference);
  std::vector<SongId> playlist = {"s000", "s001", "s002"};
  std::vector<SongId> one = {"s010"};
  auto r = rank_candidates(net, playlist, one, features);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].song, "s010");

  std::vector<SongId> many;
  for (std::size_t i = 3; i < 30; ++i) many.push_back(features.songs()[i]);
  auto a = rank_candidates(net, playlist, many, features);
  auto b = rank_candidates(net, playlist, many, features);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].song, b[i].song);
    EXPECT_EQ(a[i].score, b[i].score);
  }
}

TEST(RankCandidates, Errors) {
  auto features = random_features(10, 6, 3);
  auto net = MatchNet::init(small_config(), 4);
  std::vector<SongId> playlist = {"s000", "s001"};
  std::vector<SongId> overlap = {"s001", "s002"};
  EXPECT_THROW(rank_candidates(net, playlist, overlap, features), InputError);
  std::vector<SongId> missing = {"s002", "nope"};
  try {
    rank_candidates(net, playlist, missing, features);
    FAIL();
  } catch (const MissingFeatureError& e) {
    EXPECT_EQ(e.song(), "nope");
  }
  EXPECT_THROW(rank_candidates(net, {}, overlap, features), InputError);
  auto other = random_features(10, 5, 3);
  std::vector<SongId> fine = {"s002"};
  EXPECT_THROW(rank_candidates(net, playlist, fine, other), ShapeError);
}

TEST(RankCandidates, CachedPlaylistSideMatchesNaiveForward) {
  const std::size_t n = 10000;
  auto features = random_features(n + 20, 8, 5);
  auto c = small_config(8);
  c.hidden_dim = 16;
  c.f_inner_dim = 32;
  c.g_hidden = 16;
  auto net = MatchNet::init(c, 6);
  jitter(net, 7);
  net.set_mode(MatchNet::Mode::inference);
  std::vector<SongId> playlist(features.songs().begin(), features.songs().begin() + 20);
  std::vector<SongId> candidates(features.songs().begin() + 20, features.songs().end());
  Matrix x(20, 8);
  for (Eigen::Index t = 0; t < 20; ++t) {
    auto row = features.row(playlist[static_cast<std::size_t>(t)]);
    x.row(t) = Eigen::Map<const RowVector>(row.data(), 8);
  }

  auto t0 = std::chrono::steady_clock::now();
  auto cached = rank_candidates(net, playlist, candidates, features);
  auto t1 = std::chrono::steady_clock::now();
  std::map<SongId, double> naive;
  for (const auto& s : candidates) naive[s] = net.forward(x, features.row(s));
  auto t2 = std::chrono::steady_clock::now();

  for (const auto& item : cached) EXPECT_EQ(item.score, naive.at(item.song)) << item.song;
  double cached_s = std::chrono::duration<double>(t1 - t0).count();
  double naive_s = std::chrono::duration<double>(t2 - t1).count();
  RecordProperty("cached_seconds", std::to_string(cached_s));
  RecordProperty("naive_seconds", std::to_string(naive_s));
  // The naive path embeds 21 rows per candidate, the cached one a single row.
  EXPECT_GT(naive_s, 3.0 * cached_s) << "cached " << cached_s << "s, naive " << naive_s << "s";
}

// ---------------------------------------------------------------------------
// Model files

TEST(ModelFile, RoundTripIsExact) {
  TempDir dir;
  auto c = small_config();
  c.dropout_rate = 0.25;
  auto net = MatchNet::init(c, 40);
  jitter(net, 41);
  net.params().f_norm[0].running_var.setConstant(0.7);
  save_matchnet(net, dir / "m.pmn", {{"run_config", "{\"seed\":1}"}});
  auto loaded = load_matchnet(dir / "m.pmn", 6);
  EXPECT_EQ(loaded.net.config(), c);
  EXPECT_EQ(loaded.header.at("run_config"), "{\"seed\":1}");
  EXPECT_EQ(serialize_matchnet(loaded.net, {{"run_config", "{\"seed\":1}"}}), read_file(dir / "m.pmn"));
  net.set_mode(MatchNet::Mode::inference);
  Rng rng(42);
  for (int i = 0; i < 100; ++i) {
    auto x = random_matrix(1 + static_cast<Eigen::Index>(uniform_index(rng, 5)), 6, rng);
    auto s = random_vector(6, rng);
    EXPECT_EQ(loaded.net.forward(x, s), net.forward(x, s));
  }
}

TEST(ModelFile, CorruptPayloadByteFailsChecksum) {
  auto bytes = serialize_matchnet(MatchNet::init(small_config(), 43));
  bytes[bytes.size() - 40] ^= 0x01;
  EXPECT_THROW(deserialize_matchnet(bytes), ChecksumError);
}

TEST(ModelFile, StructuredErrors) {
  auto bytes = serialize_matchnet(MatchNet::init(small_config(), 44));
  EXPECT_THROW(deserialize_matchnet(bytes, 7), ShapeError);
  EXPECT_THROW(deserialize_matchnet(bytes.substr(0, bytes.size() - 12)), FormatError);
  EXPECT_THROW(deserialize_matchnet("PWMF" + bytes.substr(4)), VersionError);
  auto other = serialize_matchnet(MatchNet::init(small_config(7), 44));
  EXPECT_THROW(deserialize_matchnet(other, 6), ShapeError);

  std::string tampered = bytes;
  auto pos = tampered.find("format_version=1");
  ASSERT_NE(pos, std::string::npos);
  tampered[pos + 15] = '2';
  EXPECT_THROW(deserialize_matchnet(tampered), VersionError);
}

}  // namespace
}  // namespace playcont
