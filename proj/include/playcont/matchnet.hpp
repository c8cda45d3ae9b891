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

// Match network: does a candidate song fit a given playlist?
// Hybrid playlist-continuation model.
//
// A shared feature transformation f (dense -> batch-norm -> rectify ->
// dropout blocks) maps every song vector to an H-dimensional hidden
// representation. The hidden rows of a playlist are mean-pooled into h_p and
// the match discriminator g maps [h_p, f(x_s)] through
// dense -> batch-norm -> rectify -> dropout -> dense(1) -> logistic
// to the probability that the song continues the playlist.
//
// Training minimises the summed binary cross-entropy over labeled pairs with
// exact gradients (batch-norm batch statistics included) and Adam.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "playcont/binary_io.hpp"
#include "playcont/common.hpp"
#include "playcont/dataset.hpp"
#include "playcont/ranking.hpp"
#include "playcont/sampling.hpp"

namespace playcont {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

inline constexpr double kProbabilityClip = 1e-7;

struct MatchNetConfig {
  std::size_t input_dim = 0;      // D
  std::size_t hidden_dim = 128;   // H, width of the last f block
  std::size_t f_inner_dim = 256;  // width of the other f blocks
  std::size_t f_blocks = 2;
  std::size_t g_hidden = 128;
  double dropout_rate = 0.5;
  bool batch_norm = true;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.9;
  // training controls
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("matchnet config: " + m); };
    if (input_dim < 1) fail("input_dim must be >= 1");
    if (hidden_dim < 1) fail("hidden_dim must be >= 1");
    if (f_inner_dim < 1) fail("f_inner_dim must be >= 1");
    if (f_blocks < 1) fail("f_blocks must be >= 1");
    if (g_hidden < 1) fail("g_hidden must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0,1)");
    if (!(bn_epsilon > 0.0)) fail("bn_epsilon must be > 0");
    if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must lie in [0,1]");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      fail("Adam decays must lie in [0,1)");
    }
    if (!(adam_epsilon > 0.0)) fail("adam_epsilon must be > 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (max_epochs < 1) fail("max_epochs must be >= 1");
  }

  std::size_t block_width(std::size_t k) const {
    return k + 1 == f_blocks ? hidden_dim : f_inner_dim;
  }

  HeaderFields to_header() const {
    return {
        {"input_dim", std::to_string(input_dim)},
        {"hidden_dim", std::to_string(hidden_dim)},
        {"f_inner_dim", std::to_string(f_inner_dim)},
        {"f_blocks", std::to_string(f_blocks)},
        {"g_hidden", std::to_string(g_hidden)},
        {"dropout_rate", format_double(dropout_rate)},
        {"batch_norm", batch_norm ? "1" : "0"},
        {"bn_epsilon", format_double(bn_epsilon)},
        {"bn_momentum", format_double(bn_momentum)},
        {"learning_rate", format_double(learning_rate)},
        {"adam_beta1", format_double(adam_beta1)},
        {"adam_beta2", format_double(adam_beta2)},
        {"adam_epsilon", format_double(adam_epsilon)},
        {"batch_size", std::to_string(batch_size)},
        {"max_epochs", std::to_string(max_epochs)},
        {"patience", std::to_string(patience)},
    };
  }

  static MatchNetConfig from_header(const HeaderFields& h) {
    MatchNetConfig c;
    c.input_dim = header_size(h, "input_dim");
    c.hidden_dim = header_size(h, "hidden_dim");
    c.f_inner_dim = header_size(h, "f_inner_dim");
    c.f_blocks = header_size(h, "f_blocks");
    c.g_hidden = header_size(h, "g_hidden");
    c.dropout_rate = header_double(h, "dropout_rate");
    c.batch_norm = header_size(h, "batch_norm") != 0;
    c.bn_epsilon = header_double(h, "bn_epsilon");
    c.bn_momentum = header_double(h, "bn_momentum");
    c.learning_rate = header_double(h, "learning_rate");
    c.adam_beta1 = header_double(h, "adam_beta1");
    c.adam_beta2 = header_double(h, "adam_beta2");
    c.adam_epsilon = header_double(h, "adam_epsilon");
    c.batch_size = header_size(h, "batch_size");
    c.max_epochs = header_size(h, "max_epochs");
    c.patience = header_size(h, "patience");
    return c;
  }

  bool operator==(const MatchNetConfig&) const = default;
};

// y = x W + b, W is fan_in x fan_out.
struct DenseLayer {
  Matrix weight;
  RowVector bias;
};

struct BatchNormLayer {
  RowVector scale;
  RowVector shift;
  RowVector running_mean;
  RowVector running_var;
};

/// Weights of f (per block) and g. Also used as the gradient container,
/// where the running statistics are unused.
struct MatchNetParams {
  std::vector<DenseLayer> f_dense;
  std::vector<BatchNormLayer> f_norm;
  DenseLayer g_dense;  // 2H x g_hidden; rows [0,H) see h_p, rows [H,2H) see h_s
  BatchNormLayer g_norm;
  DenseLayer out;      // g_hidden x 1
};

// Learnable tensors in file order: per f block weight, bias, bn scale,
// bn shift; then the same for g; then output weight and bias.
template <class Params, class Fn>
void for_each_learnable(Params& p, Fn&& fn) {
  for (std::size_t k = 0; k < p.f_dense.size(); ++k) {
    fn(p.f_dense[k].weight);
    fn(p.f_dense[k].bias);
    fn(p.f_norm[k].scale);
    fn(p.f_norm[k].shift);
  }
  fn(p.g_dense.weight);
  fn(p.g_dense.bias);
  fn(p.g_norm.scale);
  fn(p.g_norm.shift);
  fn(p.out.weight);
  fn(p.out.bias);
}

// Running statistics in file order (after all learnable tensors).
template <class Params, class Fn>
void for_each_running(Params& p, Fn&& fn) {
  for (auto& n : p.f_norm) {
    fn(n.running_mean);
    fn(n.running_var);
  }
  fn(p.g_norm.running_mean);
  fn(p.g_norm.running_var);
}

inline std::size_t parameter_count(const MatchNetParams& p) {
  std::size_t n = 0;
  for_each_learnable(p, [&](const auto& t) { n += static_cast<std::size_t>(t.size()); });
  for_each_running(p, [&](const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

inline MatchNetParams zero_params(const MatchNetConfig& c) {
  MatchNetParams p;
  std::size_t in = c.input_dim;
  auto norm = [](std::size_t w) {
    return BatchNormLayer{RowVector::Ones(w), RowVector::Zero(w), RowVector::Zero(w),
                          RowVector::Ones(w)};
  };
  for (std::size_t k = 0; k < c.f_blocks; ++k) {
    std::size_t w = c.block_width(k);
    p.f_dense.push_back({Matrix::Zero(in, w), RowVector::Zero(w)});
    p.f_norm.push_back(norm(w));
    in = w;
  }
  p.g_dense = {Matrix::Zero(2 * c.hidden_dim, c.g_hidden), RowVector::Zero(c.g_hidden)};
  p.g_norm = norm(c.g_hidden);
  p.out = {Matrix::Zero(c.g_hidden, 1), RowVector::Zero(1)};
  return p;
}

inline MatchNetParams zero_gradients(const MatchNetParams& like) {
  MatchNetParams g = like;
  for_each_learnable(g, [](auto& t) { t.setZero(); });
  for_each_running(g, [](auto& t) { t.setZero(); });
  return g;
}

/// Examples of one mini-batch with their feature rows gathered.
struct Batch {
  Matrix playlist_rows;               // all shortened-playlist rows, stacked
  std::vector<std::size_t> offsets;   // example i owns rows [offsets[i], offsets[i+1])
  Matrix song_rows;                   // one candidate row per example
  Eigen::VectorXd labels;

  std::size_t size() const { return static_cast<std::size_t>(song_rows.rows()); }
};

/// A labeled pair resolved to feature-table row indices.
struct PairExample {
  std::vector<std::size_t> playlist;
  std::size_t song = 0;
  double label = 0.0;
};

inline std::vector<PairExample> index_pairs(std::span<const LabeledPair> pairs,
                                            const FeatureTable& features) {
  std::vector<PairExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    PairExample e;
    if (p.playlist_songs.empty()) {
      throw InputError("pair with empty playlist side (candidate '" + p.candidate + "')");
    }
    for (const auto& s : p.playlist_songs) e.playlist.push_back(features.index_of(s));
    e.song = features.index_of(p.candidate);
    e.label = p.label;
    out.push_back(std::move(e));
  }
  return out;
}

inline Batch gather_batch(const FeatureTable& features, std::span<const PairExample> examples,
                          std::span<const std::size_t> which) {
  Batch b;
  const auto dim = static_cast<Eigen::Index>(features.dim());
  std::size_t rows = 0;
  for (auto i : which) rows += examples[i].playlist.size();
  b.playlist_rows.resize(static_cast<Eigen::Index>(rows), dim);
  b.song_rows.resize(static_cast<Eigen::Index>(which.size()), dim);
  b.labels.resize(static_cast<Eigen::Index>(which.size()));
  b.offsets.assign(1, 0);
  Eigen::Index r = 0;
  for (std::size_t j = 0; j < which.size(); ++j) {
    const auto& e = examples[which[j]];
    for (auto row : e.playlist) {
      b.playlist_rows.row(r++) = Eigen::Map<const RowVector>(features.row(row).data(), dim);
    }
    b.offsets.push_back(static_cast<std::size_t>(r));
    b.song_rows.row(static_cast<Eigen::Index>(j)) =
        Eigen::Map<const RowVector>(features.row(e.song).data(), dim);
    b.labels(static_cast<Eigen::Index>(j)) = e.label;
  }
  return b;
}

inline Batch gather_batch(const FeatureTable& features, std::span<const PairExample> examples) {
  std::vector<std::size_t> all(examples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return gather_batch(features, examples, all);
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// Binary cross-entropy of one prediction, probability clipped to
/// [1e-7, 1 - 1e-7].
inline double bce(double prob, double label) {
  double p = std::clamp(prob, kProbabilityClip, 1.0 - kProbabilityClip);
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

struct LossValue {
  double total = 0.0;
  double mean = 0.0;
};

/// Intermediate values of a batched forward pass, kept for backprop.
struct ForwardCache {
  struct Norm {
    RowVector mean, var, inv_std;
    Matrix xhat;
  };
  std::vector<Matrix> inputs;   // input to f block k
  std::vector<Matrix> normed;   // block k after batch-norm, before rectify
  std::vector<Norm> norm;
  std::vector<Matrix> masks;    // dropout multipliers; empty when off
  Matrix hidden;                // f output, playlist rows then song rows
  Matrix g_in;                  // [h_p, h_s]
  Matrix g_normed;
  Norm g_norm;
  Matrix g_mask;
  Matrix g_act;
  Eigen::VectorXd probs;
  bool training = false;
};

class MatchNet {
 public:
  enum class Mode { train, inference };

  MatchNet() = default;

  /// Glorot-uniform dense weights, zero biases, identity batch-norm.
  static MatchNet init(const MatchNetConfig& config, std::uint64_t seed) {
    config.validate();
    MatchNet net;
    net.config_ = config;
    net.params_ = zero_params(config);
    Rng rng(seed);
    auto glorot = [&](DenseLayer& d) {
      double bound = std::sqrt(6.0 / static_cast<double>(d.weight.rows() + d.weight.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < d.weight.size(); ++i) d.weight.data()[i] = u(rng);
    };
    for (auto& d : net.params_.f_dense) glorot(d);
    glorot(net.params_.g_dense);
    glorot(net.params_.out);
    return net;
  }

  static MatchNet from_params(const MatchNetConfig& config, MatchNetParams params) {
    config.validate();
    MatchNet net;
    net.config_ = config;
    net.params_ = std::move(params);
    net.mode_ = Mode::inference;
    return net;
  }

  const MatchNetConfig& config() const { return config_; }
  const MatchNetParams& params() const { return params_; }
  MatchNetParams& params() { return params_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  // -------------------------------------------------------------------------
  // Inference path. Every song row is transformed on its own and pooling sums
  // in a canonical order, so results do not depend on row order or on how
  // many candidates are scored together.

  RowVector embed(std::span<const double> x) const {
    RowVector a = Eigen::Map<const RowVector>(x.data(), static_cast<Eigen::Index>(x.size()));
    for (std::size_t k = 0; k < config_.f_blocks; ++k) {
      RowVector z = a * params_.f_dense[k].weight;
      z += params_.f_dense[k].bias;
      a = rectify(normalize_running(z, params_.f_norm[k]));
    }
    return a;
  }

  // Mean of the hidden rows, summed per column in ascending value order.
  static RowVector pool(const std::vector<RowVector>& rows) {
    const auto width = rows.front().size();
    RowVector out(width);
    std::vector<double> column(rows.size());
    for (Eigen::Index j = 0; j < width; ++j) {
      for (std::size_t t = 0; t < rows.size(); ++t) column[t] = rows[t](j);
      std::sort(column.begin(), column.end());
      double sum = 0.0;
      for (double v : column) sum += v;
      out(j) = sum / static_cast<double>(rows.size());
    }
    return out;
  }

  struct PlaylistSide {
    RowVector pooled;     // h_p
    RowVector projected;  // h_p times the playlist half of g's dense weights
  };

  PlaylistSide playlist_side(const Matrix& playlist_features) const {
    std::vector<RowVector> hidden;
    hidden.reserve(static_cast<std::size_t>(playlist_features.rows()));
    for (Eigen::Index t = 0; t < playlist_features.rows(); ++t) {
      hidden.push_back(embed(std::span<const double>(playlist_features.row(t).data(),
                                                     static_cast<std::size_t>(playlist_features.cols()))));
    }
    PlaylistSide side;
    side.pooled = pool(hidden);
    side.projected = side.pooled * params_.g_dense.weight.topRows(static_cast<Eigen::Index>(config_.hidden_dim));
    return side;
  }

  // f(x_s) times the song half of g's dense weights.
  RowVector song_side(std::span<const double> x) const {
    return embed(x) * params_.g_dense.weight.bottomRows(static_cast<Eigen::Index>(config_.hidden_dim));
  }

  double head(const PlaylistSide& playlist, const RowVector& song) const {
    RowVector pre = playlist.projected + song;
    pre += params_.g_dense.bias;
    RowVector a = rectify(normalize_running(pre, params_.g_norm));
    double logit = a.dot(params_.out.weight.col(0).transpose()) + params_.out.bias(0);
    return logistic(logit);
  }

  /// Match probability of one (playlist, song) pair. In inference mode this
  /// uses running batch-norm statistics and no dropout; in train mode it is
  /// a one-example training-mode pass.
  double forward(const Matrix& playlist_features, std::span<const double> song_feature) const {
    check_input(playlist_features, song_feature);
    if (mode_ == Mode::inference) {
      return head(playlist_side(playlist_features), song_side(song_feature));
    }
    Batch b;
    b.playlist_rows = playlist_features;
    b.offsets = {0, static_cast<std::size_t>(playlist_features.rows())};
    b.song_rows = Eigen::Map<const RowVector>(song_feature.data(),
                                              static_cast<Eigen::Index>(song_feature.size()));
    b.labels = Eigen::VectorXd::Zero(1);
    return forward_batch(b, true, 0).probs(0);
  }

  // -------------------------------------------------------------------------
  // Batched path used for training and validation cost.

  ForwardCache forward_batch(const Batch& batch, bool training, std::uint64_t mask_seed) const {
    const auto n_examples = static_cast<Eigen::Index>(batch.size());
    if (n_examples == 0) throw InputError("empty batch");
    if (batch.offsets.size() != batch.size() + 1) throw InputError("batch offsets mismatch");
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch.offsets[i + 1] <= batch.offsets[i]) throw InputError("example with empty playlist");
    }
    const auto n_playlist_rows = batch.playlist_rows.rows();
    ForwardCache c;
    c.training = training;
    Rng rng(mask_seed);
    const double keep = 1.0 - config_.dropout_rate;
    const bool dropout = training && config_.dropout_rate > 0.0;

    Matrix a(n_playlist_rows + n_examples, static_cast<Eigen::Index>(config_.input_dim));
    a.topRows(n_playlist_rows) = batch.playlist_rows;
    a.bottomRows(n_examples) = batch.song_rows;

    for (std::size_t k = 0; k < config_.f_blocks; ++k) {
      c.inputs.push_back(a);
      Matrix z = a * params_.f_dense[k].weight;
      z.rowwise() += params_.f_dense[k].bias;
      ForwardCache::Norm norm;
      c.normed.push_back(apply_norm(z, params_.f_norm[k], training, norm));
      c.norm.push_back(std::move(norm));
      a = c.normed.back().cwiseMax(0.0);
      if (dropout) {
        c.masks.push_back(dropout_mask(a.rows(), a.cols(), keep, rng));
        a = a.cwiseProduct(c.masks.back());
      }
    }
    c.hidden = a;

    const auto h = static_cast<Eigen::Index>(config_.hidden_dim);
    c.g_in.resize(n_examples, 2 * h);
    for (Eigen::Index i = 0; i < n_examples; ++i) {
      auto lo = static_cast<Eigen::Index>(batch.offsets[static_cast<std::size_t>(i)]);
      auto hi = static_cast<Eigen::Index>(batch.offsets[static_cast<std::size_t>(i) + 1]);
      c.g_in.row(i).head(h) = c.hidden.middleRows(lo, hi - lo).colwise().mean();
      c.g_in.row(i).tail(h) = c.hidden.row(n_playlist_rows + i);
    }
    Matrix z = c.g_in * params_.g_dense.weight;
    z.rowwise() += params_.g_dense.bias;
    c.g_normed = apply_norm(z, params_.g_norm, training, c.g_norm);
    c.g_act = c.g_normed.cwiseMax(0.0);
    if (dropout) {
      c.g_mask = dropout_mask(c.g_act.rows(), c.g_act.cols(), keep, rng);
      c.g_act = c.g_act.cwiseProduct(c.g_mask);
    }
    Eigen::VectorXd logits = c.g_act * params_.out.weight.col(0);
    c.probs.resize(n_examples);
    for (Eigen::Index i = 0; i < n_examples; ++i) {
      c.probs(i) = logistic(logits(i) + params_.out.bias(0));
    }
    return c;
  }

  /// Exact gradients of the summed cross-entropy for a cached forward pass.
  MatchNetParams backward_batch(const Batch& batch, const ForwardCache& c) const {
    MatchNetParams g = zero_gradients(params_);
    const auto n_examples = static_cast<Eigen::Index>(batch.size());
    const auto n_playlist_rows = batch.playlist_rows.rows();
    const auto h = static_cast<Eigen::Index>(config_.hidden_dim);

    Eigen::VectorXd dlogit(n_examples);
    for (Eigen::Index i = 0; i < n_examples; ++i) {
      double p = c.probs(i);
      bool clipped = p < kProbabilityClip || p > 1.0 - kProbabilityClip;
      dlogit(i) = clipped ? 0.0 : p - batch.labels(i);
    }
    g.out.weight.col(0) = c.g_act.transpose() * dlogit;
    g.out.bias(0) = dlogit.sum();

    Matrix d = dlogit * params_.out.weight.col(0).transpose();
    if (c.g_mask.size() > 0) d = d.cwiseProduct(c.g_mask);
    d = d.cwiseProduct((c.g_normed.array() > 0.0).cast<double>().matrix());
    d = norm_backward(d, params_.g_norm, c.g_norm, g.g_norm);
    g.g_dense.weight = c.g_in.transpose() * d;
    g.g_dense.bias = d.colwise().sum();
    Matrix d_in = d * params_.g_dense.weight.transpose();

    Matrix dh = Matrix::Zero(c.hidden.rows(), h);
    for (Eigen::Index i = 0; i < n_examples; ++i) {
      auto lo = static_cast<Eigen::Index>(batch.offsets[static_cast<std::size_t>(i)]);
      auto hi = static_cast<Eigen::Index>(batch.offsets[static_cast<std::size_t>(i) + 1]);
      RowVector share = d_in.row(i).head(h) / static_cast<double>(hi - lo);
      for (Eigen::Index r = lo; r < hi; ++r) dh.row(r) += share;
      dh.row(n_playlist_rows + i) = d_in.row(i).tail(h);
    }

    for (std::size_t k = config_.f_blocks; k-- > 0;) {
      if (!c.masks.empty()) dh = dh.cwiseProduct(c.masks[k]);
      dh = dh.cwiseProduct((c.normed[k].array() > 0.0).cast<double>().matrix());
      dh = norm_backward(dh, params_.f_norm[k], c.norm[k], g.f_norm[k]);
      g.f_dense[k].weight = c.inputs[k].transpose() * dh;
      g.f_dense[k].bias = dh.colwise().sum();
      if (k > 0) dh = dh * params_.f_dense[k].weight.transpose();
    }
    return g;
  }

  struct GradientResult {
    MatchNetParams gradient;
    LossValue loss;
    ForwardCache cache;
  };

  /// Gradient of the summed batch loss. Dropout masks derive from
  /// `mask_seed`, so equal seeds give equal masks.
  GradientResult backward(const Batch& batch, std::uint64_t mask_seed = 0) const {
    if (mode_ != Mode::train) throw Error("backward requires train mode");
    GradientResult r;
    r.cache = forward_batch(batch, true, mask_seed);
    r.loss = loss_of(r.cache.probs, batch.labels);
    r.gradient = backward_batch(batch, r.cache);
    return r;
  }

  /// Summed and mean cross-entropy under the current mode.
  LossValue loss(const Batch& batch, std::uint64_t mask_seed = 0) const {
    auto c = forward_batch(batch, mode_ == Mode::train, mask_seed);
    return loss_of(c.probs, batch.labels);
  }

  static LossValue loss_of(const Eigen::VectorXd& probs, const Eigen::VectorXd& labels) {
    if (probs.size() == 0) throw InputError("empty batch");
    LossValue v;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
      double y = labels(i);
      if (y != 0.0 && y != 1.0) throw InputError("labels must be 0 or 1");
      v.total += bce(probs(i), y);
    }
    v.mean = v.total / static_cast<double>(probs.size());
    return v;
  }

  // Moves running batch-norm statistics towards the cached batch statistics.
  void update_running_stats(const ForwardCache& c) {
    if (!config_.batch_norm) return;
    const double m = config_.bn_momentum;
    for (std::size_t k = 0; k < config_.f_blocks; ++k) {
      auto& n = params_.f_norm[k];
      n.running_mean = m * n.running_mean + (1.0 - m) * c.norm[k].mean;
      n.running_var = m * n.running_var + (1.0 - m) * c.norm[k].var;
    }
    params_.g_norm.running_mean = m * params_.g_norm.running_mean + (1.0 - m) * c.g_norm.mean;
    params_.g_norm.running_var = m * params_.g_norm.running_var + (1.0 - m) * c.g_norm.var;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_learnable(params_, [&](const auto& t) { ok = ok && t.allFinite(); });
    for_each_running(params_, [&](const auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }

 private:
  void check_input(const Matrix& playlist_features, std::span<const double> song_feature) const {
    if (playlist_features.rows() < 1) throw InputError("playlist has no songs");
    if (static_cast<std::size_t>(playlist_features.cols()) != config_.input_dim ||
        song_feature.size() != config_.input_dim) {
      throw ShapeError("feature dimension does not match the model input_dim " +
                       std::to_string(config_.input_dim));
    }
    if (!playlist_features.allFinite()) throw InputError("non-finite playlist feature");
    for (double v : song_feature) {
      if (!std::isfinite(v)) throw InputError("non-finite song feature");
    }
  }

  static RowVector rectify(const RowVector& v) { return v.cwiseMax(0.0); }

  RowVector normalize_running(const RowVector& z, const BatchNormLayer& n) const {
    if (!config_.batch_norm) return z;
    RowVector out(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      double inv = 1.0 / std::sqrt(n.running_var(j) + config_.bn_epsilon);
      out(j) = (z(j) - n.running_mean(j)) * inv * n.scale(j) + n.shift(j);
    }
    return out;
  }

  Matrix apply_norm(const Matrix& z, const BatchNormLayer& n, bool training,
                    ForwardCache::Norm& cache) const {
    if (!config_.batch_norm) return z;
    if (training) {
      cache.mean = z.colwise().mean();
      Matrix centered = z.rowwise() - cache.mean;
      cache.var = centered.array().square().colwise().mean().matrix();
      cache.inv_std = (cache.var.array() + config_.bn_epsilon).sqrt().inverse().matrix();
      cache.xhat = centered.array().rowwise() * cache.inv_std.array();
    } else {
      RowVector inv = (n.running_var.array() + config_.bn_epsilon).sqrt().inverse().matrix();
      cache.xhat = (z.rowwise() - n.running_mean).array().rowwise() * inv.array();
    }
    Matrix y = cache.xhat.array().rowwise() * n.scale.array();
    y.rowwise() += n.shift;
    return y;
  }

  Matrix norm_backward(const Matrix& dy, const BatchNormLayer& n, const ForwardCache::Norm& cache,
                       BatchNormLayer& grad) const {
    if (!config_.batch_norm) return dy;
    grad.shift = dy.colwise().sum();
    grad.scale = dy.cwiseProduct(cache.xhat).colwise().sum();
    Matrix dxhat = dy.array().rowwise() * n.scale.array();
    const double rows = static_cast<double>(dy.rows());
    RowVector sum_dxhat = dxhat.colwise().sum();
    RowVector sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).colwise().sum();
    Matrix dz = (rows * dxhat).rowwise() - sum_dxhat;
    dz.array() -= cache.xhat.array().rowwise() * sum_dxhat_xhat.array();
    dz = dz.array().rowwise() * (cache.inv_std.array() / rows);
    return dz;
  }

  static Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double keep, Rng& rng) {
    Matrix m(rows, cols);
    std::bernoulli_distribution draw(keep);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = draw(rng) ? 1.0 / keep : 0.0;
    return m;
  }

  MatchNetConfig config_;
  MatchNetParams params_;
  Mode mode_ = Mode::train;
};

// ---------------------------------------------------------------------------
// Ranking

/// Scores every candidate against the playlist with inference semantics. The
/// playlist side (f over its rows, pooling, projection) is computed once.
inline std::vector<ScoredSong> rank_candidates(const MatchNet& net,
                                               std::span<const SongId> playlist,
                                               std::span<const SongId> candidates,
                                               const FeatureTable& features) {
  if (playlist.empty()) throw InputError("cannot rank for an empty playlist");
  if (features.dim() != net.config().input_dim) {
    throw ShapeError("feature table dim " + std::to_string(features.dim()) +
                     " does not match model input_dim " + std::to_string(net.config().input_dim));
  }
  std::vector<SongId> members(playlist.begin(), playlist.end());
  std::sort(members.begin(), members.end());
  Matrix x(static_cast<Eigen::Index>(playlist.size()), static_cast<Eigen::Index>(features.dim()));
  for (std::size_t t = 0; t < playlist.size(); ++t) {
    auto row = features.row(playlist[t]);
    x.row(static_cast<Eigen::Index>(t)) =
        Eigen::Map<const RowVector>(row.data(), static_cast<Eigen::Index>(row.size()));
  }
  std::vector<std::size_t> rows(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (std::binary_search(members.begin(), members.end(), candidates[i])) {
      throw InputError("candidate '" + candidates[i] + "' is already in the playlist");
    }
    rows[i] = features.index_of(candidates[i]);
  }
  const auto side = net.playlist_side(x);
  std::vector<ScoredSong> out(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t i) {
    out[i] = {candidates[i], net.head(side, net.song_side(features.row(rows[i])))};
  });
  sort_by_score(out);
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainReport {
  std::vector<double> train_cost;  // mean training-mode loss per epoch
  std::vector<double> val_cost;    // mean inference-mode loss per epoch
  std::size_t best_epoch = 0;      // 1-based
  double seconds = 0.0;
};

/// Optional per-epoch refresh of mismatch candidates.
struct NegativeRefresh {
  const std::vector<SongId>* universe = nullptr;
  std::span<const Playlist> sources;
};

/// Mean inference-mode loss over a pair set, evaluated in batches.
inline double mean_cost(const MatchNet& net, const FeatureTable& features,
                        std::span<const PairExample> examples, std::size_t batch_size = 256) {
  double total = 0.0;
  std::vector<std::size_t> which;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    which.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) which.push_back(i);
    Batch b = gather_batch(features, examples, which);
    total += MatchNet::loss_of(net.forward_batch(b, false, 0).probs, b.labels).total;
  }
  return total / static_cast<double>(examples.size());
}

namespace detail {

struct AdamState {
  MatchNetParams m, v;
  std::size_t step = 0;
};

inline void adam_update(MatchNetParams& params, const MatchNetParams& grad, AdamState& st,
                        const MatchNetConfig& c, double grad_scale) {
  ++st.step;
  const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(st.step));
  std::vector<double*> p, g, m, v;
  std::vector<std::size_t> sizes;
  for_each_learnable(params, [&](auto& t) {
    p.push_back(t.data());
    sizes.push_back(static_cast<std::size_t>(t.size()));
  });
  for_each_learnable(const_cast<MatchNetParams&>(grad), [&](auto& t) { g.push_back(t.data()); });
  for_each_learnable(st.m, [&](auto& t) { m.push_back(t.data()); });
  for_each_learnable(st.v, [&](auto& t) { v.push_back(t.data()); });
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < sizes[t]; ++i) {
      double gi = g[t][i] * grad_scale;
      m[t][i] = c.adam_beta1 * m[t][i] + (1.0 - c.adam_beta1) * gi;
      v[t][i] = c.adam_beta2 * v[t][i] + (1.0 - c.adam_beta2) * gi * gi;
      double mhat = m[t][i] / bc1;
      double vhat = v[t][i] / bc2;
      p[t][i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.adam_epsilon);
    }
  }
}

}  // namespace detail

/// Mini-batch Adam on the mean batch loss. After every epoch the validation
/// cost is measured in inference mode; the parameters with the lowest
/// validation cost are restored at the end and the net is left in
/// inference mode. Stops after `patience` epochs without improvement.
inline TrainReport train(MatchNet& net, std::span<const LabeledPair> train_pairs,
                         std::span<const LabeledPair> val_pairs, const FeatureTable& features,
                         std::uint64_t seed, const NegativeRefresh* refresh = nullptr,
                         const std::function<void(std::size_t, double, double)>& on_epoch = {}) {
  if (train_pairs.empty() || val_pairs.empty()) {
    throw InputError("training and validation pair sets must be nonempty");
  }
  const auto& cfg = net.config();
  if (features.dim() != cfg.input_dim) {
    throw ShapeError("feature table dim does not match model input_dim");
  }
  auto started = std::chrono::steady_clock::now();
  std::vector<LabeledPair> current(train_pairs.begin(), train_pairs.end());
  auto examples = index_pairs(current, features);
  const auto val_examples = index_pairs(val_pairs, features);

  TrainReport report;
  detail::AdamState adam{zero_gradients(net.params()), zero_gradients(net.params()), 0};
  MatchNetParams best = net.params();
  double best_cost = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(examples.size());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(mix_seed(seed, epoch));
    if (refresh && refresh->universe && epoch > 1) {
      current = resample_mismatches(current, *refresh->universe, refresh->sources,
                                    mix_seed(seed, 0x4e454700 + epoch), &features);
      examples = index_pairs(current, features);
    }
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    net.set_mode(MatchNet::Mode::train);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      auto end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> which(order.data() + start, end - start);
      Batch batch = gather_batch(features, examples, which);
      auto step = net.backward(batch, rng());
      if (!std::isfinite(step.loss.total)) {
        throw NumericalError("training diverged: non-finite loss at epoch " +
                             std::to_string(epoch) + ", batch starting at " + std::to_string(start));
      }
      epoch_loss += step.loss.total;
      detail::adam_update(net.params(), step.gradient, adam, cfg,
                          1.0 / static_cast<double>(batch.size()));
      net.update_running_stats(step.cache);
      if (!net.all_finite()) {
        throw NumericalError("training diverged: non-finite parameters at epoch " +
                             std::to_string(epoch));
      }
    }
    net.set_mode(MatchNet::Mode::inference);
    double val = mean_cost(net, features, val_examples);
    if (!std::isfinite(val)) throw NumericalError("non-finite validation cost");
    report.train_cost.push_back(epoch_loss / static_cast<double>(examples.size()));
    report.val_cost.push_back(val);
    if (on_epoch) on_epoch(epoch, report.train_cost.back(), val);
    if (val < best_cost) {
      best_cost = val;
      best = net.params();
      report.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= cfg.patience) break;
  }
  net.params() = std::move(best);
  net.set_mode(MatchNet::Mode::inference);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// ---------------------------------------------------------------------------
// Model file: "PMN1", u32 header length, key=value header (format_version,
// config, param_count, extra fields), param_count little-endian f64 in
// for_each_learnable then for_each_running order, CRC-32 of all preceding
// bytes.

inline constexpr std::string_view kMatchNetMagic = "PMN1";
inline constexpr int kMatchNetFormatVersion = 1;

inline std::string serialize_matchnet(const MatchNet& net, const HeaderFields& extra = {}) {
  HeaderFields header = net.config().to_header();
  for (const auto& [k, v] : extra) header.emplace(k, v);
  header["format_version"] = std::to_string(kMatchNetFormatVersion);
  header["param_count"] = std::to_string(parameter_count(net.params()));
  ByteWriter w;
  w.put_bytes(kMatchNetMagic);
  w.put_header(header);
  auto put = [&](const auto& t) { w.put_f64s(std::span<const double>(t.data(), static_cast<std::size_t>(t.size()))); };
  for_each_learnable(net.params(), put);
  for_each_running(net.params(), put);
  return w.finish();
}

inline void save_matchnet(const MatchNet& net, const std::filesystem::path& path,
                          const HeaderFields& extra = {}) {
  write_file(path, serialize_matchnet(net, extra));
}

struct LoadedMatchNet {
  MatchNet net;
  HeaderFields header;
};

inline LoadedMatchNet deserialize_matchnet(std::string_view data,
                                           std::optional<std::size_t> expected_input_dim = {}) {
  Frame frame = read_frame(data, kMatchNetMagic);
  if (header_value(frame.header, "format_version") != std::to_string(kMatchNetFormatVersion)) {
    throw VersionError("unsupported matchnet format_version " +
                       header_value(frame.header, "format_version"));
  }
  MatchNetConfig config = MatchNetConfig::from_header(frame.header);
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
  if (expected_input_dim && *expected_input_dim != config.input_dim) {
    throw ShapeError("model input_dim " + std::to_string(config.input_dim) +
                     " does not match expected " + std::to_string(*expected_input_dim));
  }
  MatchNetParams params = zero_params(config);
  std::size_t expected = parameter_count(params);
  if (header_size(frame.header, "param_count") != expected) {
    throw ShapeError("param_count " + header_value(frame.header, "param_count") +
                     " does not match the config's " + std::to_string(expected));
  }
  if (frame.payload.size() < expected * 8) throw FormatError("truncated model file");
  if (frame.payload.size() > expected * 8) throw FormatError("trailing bytes in model file");
  verify_checksum(frame);
  ByteReader r(frame.payload);
  auto get = [&](auto& t) { r.get_f64s(std::span<double>(t.data(), static_cast<std::size_t>(t.size()))); };
  for_each_learnable(params, get);
  for_each_running(params, get);
  LoadedMatchNet out{MatchNet::from_params(config, std::move(params)), frame.header};
  if (!out.net.all_finite()) throw FormatError("non-finite parameters in model file");
  return out;
}

inline LoadedMatchNet load_matchnet(const std::filesystem::path& path,
                                    std::optional<std::size_t> expected_input_dim = {}) {
  return deserialize_matchnet(read_file(path), expected_input_dim);
}

}  // namespace playcont
