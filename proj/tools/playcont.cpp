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


// playcont: command-line driver for synthetic data generation, dataset
// preparation, model training and off-line evaluation.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or input error.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "playcont/dataset.hpp"
#include "playcont/evaluation.hpp"
#include "playcont/matchnet.hpp"
#include "playcont/pipeline.hpp"
#include "playcont/sampling.hpp"
#include "playcont/wmf.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace playcont;

namespace {

// Every option of a subcommand with its effective value.
ordered_json echo_options(const CLI::App& app) {
  ordered_json out;
  out["subcommand"] = app.get_name();
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_name() == "--help" || opt->get_lnames().empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      for (std::size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
    } else {
      value = opt->get_default_str();
    }
    out[opt->get_lnames().front()] = value;
  }
  return out;
}

HeaderFields run_header(const ordered_json& run) { return {{"run_config", run.dump()}}; }

void write_json(const fs::path& path, const ordered_json& j) { write_file(path, j.dump(2) + "\n"); }

// --------------------------------------------------------------------------

struct SynthOptions {
  SynthConfig config;
  std::string out;
};

void run_synth(const SynthOptions& o, const ordered_json& run) {
  auto data = generate_synthetic(o.config);
  fs::create_directories(o.out);
  save_playlists(fs::path(o.out) / "playlists.pls", data.playlists);
  save_features(fs::path(o.out) / "features.txt", data.features);
  std::string clusters;
  for (const auto& [song, c] : data.song_cluster) clusters += song + "\t" + std::to_string(c) + "\n";
  write_file(fs::path(o.out) / "clusters.tsv", clusters);
  write_json(fs::path(o.out) / "run.json", run);
  std::cout << "seed=" << o.config.seed << "\n"
            << "wrote " << data.playlists.size() << " playlists and " << data.features.size()
            << " songs to " << o.out << "\n";
}

// --------------------------------------------------------------------------

struct PrepareOptions {
  std::string playlists, features, out;
  std::string mode = "weak";
  std::uint64_t seed = 0;
  double holdout = 0.2;
  double playlist_fraction = 0.2;
  FilterOptions filter;
};

ordered_json quartile_json(const Quartiles& q) {
  return ordered_json{{"min", q.min}, {"q1", q.q1}, {"median", q.median}, {"q3", q.q3}, {"max", q.max}};
}

void print_quartiles(const std::string& label, const Quartiles& q) {
  std::cout << std::left << std::setw(22) << label << std::right;
  for (double v : {q.min, q.q1, q.median, q.q3, q.max}) std::cout << std::setw(10) << v;
  std::cout << "\n";
}

void run_prepare(const PrepareOptions& o, const ordered_json& run) {
  auto mode = parse_split_mode(o.mode);
  auto features = load_features(o.features);
  auto loaded = load_playlists(o.playlists);
  auto filtered = filter_collection(loaded.playlists, features, o.filter);
  const auto& st = filtered.stats;

  std::vector<double> lengths, artist_counts;
  std::map<SongId, double> frequency;
  std::set<std::string> artists;
  for (const auto& p : filtered.playlists) {
    lengths.push_back(static_cast<double>(p.size()));
    std::set<std::string> pa;
    for (const auto& s : p.songs) {
      pa.insert(p.artists.at(s));
      frequency[s] += 1.0;
    }
    artist_counts.push_back(static_cast<double>(pa.size()));
    artists.insert(pa.begin(), pa.end());
  }
  std::vector<double> freq_values;
  for (const auto& [s, f] : frequency) freq_values.push_back(f);
  auto q_len = quartiles(lengths), q_art = quartiles(artist_counts), q_freq = quartiles(freq_values);

  std::cout << "seed=" << o.seed << "\n"
            << "duplicates collapsed: " << loaded.duplicates_collapsed << "\n"
            << "filter: input=" << st.input << " rejected_artists=" << st.rejected_artists
            << " rejected_short=" << st.rejected_short
            << " songs_without_features=" << st.songs_without_features
            << " rejected_final=" << st.rejected_final << " output=" << st.output << "\n"
            << "playlists=" << filtered.playlists.size() << " songs=" << frequency.size()
            << " artists=" << artists.size() << "\n";
  std::cout << std::left << std::setw(22) << "statistic" << std::right;
  for (const char* h : {"min", "q1", "median", "q3", "max"}) std::cout << std::setw(10) << h;
  std::cout << "\n";
  print_quartiles("songs per playlist", q_len);
  print_quartiles("artists per playlist", q_art);
  print_quartiles("song frequency", q_freq);

  SplitBundle bundle = mode == SplitMode::weak
                           ? split_weak(filtered.playlists, o.holdout, o.seed)
                           : split_strong(filtered.playlists, o.playlist_fraction, o.holdout, o.seed);
  extend_universe(bundle, features);
  save_bundle(bundle, o.out, run);

  ordered_json stats;
  stats["run"] = run;
  stats["duplicates_collapsed"] = loaded.duplicates_collapsed;
  stats["filter"] = {{"input", st.input},
                     {"rejected_artists", st.rejected_artists},
                     {"rejected_short", st.rejected_short},
                     {"songs_without_features", st.songs_without_features},
                     {"rejected_final", st.rejected_final},
                     {"output", st.output}};
  stats["playlists"] = filtered.playlists.size();
  stats["songs"] = frequency.size();
  stats["artists"] = artists.size();
  stats["songs_per_playlist"] = quartile_json(q_len);
  stats["artists_per_playlist"] = quartile_json(q_art);
  stats["song_frequency"] = quartile_json(q_freq);
  write_json(fs::path(o.out) / "stats.json", stats);
  std::cout << "bundle " << o.out << " mode=" << o.mode << " train=" << bundle.train_playlists.size()
            << " query=" << bundle.query_playlists.size() << " universe=" << bundle.universe.size()
            << " checksum=" << bundle_checksum(o.out) << "\n";
}

// --------------------------------------------------------------------------

struct TrainOptions {
  std::string bundle, features, out, model = "matchnet", pairs_out;
  std::uint64_t seed = 0;
  // matchnet
  std::vector<std::size_t> hidden_dims = {128};
  std::vector<double> learning_rates = {1e-3};
  std::vector<double> dropouts = {0.5};
  std::size_t epochs = 50, patience = 5, batch_size = 64;
  double val_fraction = 0.1;
  bool resample = false;
  // wmf
  std::size_t factors = 64, sweeps = 15;
  std::vector<double> alphas = {1, 10, 40, 100};
  std::vector<double> lambdas = {0.01, 0.1, 1};
};

ordered_json report_json(const TrainReport& r) {
  return ordered_json{{"train_cost", r.train_cost},
                      {"val_cost", r.val_cost},
                      {"best_epoch", r.best_epoch},
                      {"best_val_cost", r.val_cost.at(r.best_epoch - 1)}};
}

void run_train(const TrainOptions& o, const ordered_json& run) {
  auto bundle = load_bundle(o.bundle);
  fs::create_directories(o.out);
  std::cout << "seed=" << o.seed << "\n";

  if (o.model == "wmf") {
    if (bundle.mode != SplitMode::weak) {
      throw UnsupportedModeError("wmf can only be trained on a weak generalization bundle");
    }
    WmfConfig base;
    base.factors = o.factors;
    base.sweeps = o.sweeps;
    base.seed = mix_seed(o.seed, kSaltInit);
    auto grid = wmf_grid_search(bundle.train_playlists, bundle.universe, o.alphas, o.lambdas, base, o.seed);
    std::string log = "alpha,lambda,validation_map\n";
    for (const auto& r : grid.rows) {
      log += format_double(r.alpha) + "," + format_double(r.lambda) + "," + format_double(r.validation_map) + "\n";
      std::cout << "alpha=" << r.alpha << " lambda=" << r.lambda << " validation_map=" << r.validation_map << "\n";
    }
    write_file(fs::path(o.out) / "grid_log.csv", log);
    auto model = als_fit(build_interaction_matrix(bundle.train_playlists), grid.best);
    save_wmf(model, fs::path(o.out) / "model.pwmf", run_header(run));
    ordered_json rep;
    rep["run"] = run;
    rep["model"] = "wmf";
    rep["selected"] = {{"alpha", grid.best.alpha}, {"lambda", grid.best.lambda}, {"factors", grid.best.factors}};
    write_json(fs::path(o.out) / "train_report.json", rep);
    std::cout << "selected alpha=" << grid.best.alpha << " lambda=" << grid.best.lambda << "\n";
    return;
  }
  if (o.model != "matchnet") throw ConfigError("unknown model '" + o.model + "'");

  auto features = load_features(o.features);
  if (!o.pairs_out.empty()) {
    save_pairs(o.pairs_out, derive_pairs(bundle.train_playlists, bundle.universe,
                                         mix_seed(o.seed, kSaltPairs), &features));
  }
  std::optional<MatchNetRun> best;
  double best_cost = std::numeric_limits<double>::infinity();
  ordered_json grid_runs = ordered_json::array();
  std::string log = "hidden_dim,learning_rate,dropout,best_epoch,best_val_cost\n";
  for (auto h : o.hidden_dims) {
    for (double lr : o.learning_rates) {
      for (double dr : o.dropouts) {
        MatchNetConfig c;
        c.hidden_dim = h;
        c.f_inner_dim = 2 * h;
        c.g_hidden = h;
        c.learning_rate = lr;
        c.dropout_rate = dr;
        c.max_epochs = o.epochs;
        c.patience = o.patience;
        c.batch_size = o.batch_size;
        MatchNetRunOptions ro;
        ro.val_fraction = o.val_fraction;
        ro.resample_negatives = o.resample;
        ro.on_epoch = [](std::size_t e, double tr, double val) {
          std::cout << "  epoch " << e << " train_cost=" << tr << " val_cost=" << val << std::endl;
        };
        std::cout << "hidden_dim=" << h << " learning_rate=" << lr << " dropout=" << dr << "\n";
        auto r = train_matchnet_on(bundle.train_playlists, bundle.universe, features, c, o.seed, ro);
        double cost = r.report.val_cost.at(r.report.best_epoch - 1);
        std::cout << "  best_epoch=" << r.report.best_epoch << " best_val_cost=" << cost
                  << " seconds=" << r.report.seconds << "\n";
        log += std::to_string(h) + "," + format_double(lr) + "," + format_double(dr) + "," +
               std::to_string(r.report.best_epoch) + "," + format_double(cost) + "\n";
        ordered_json g = report_json(r.report);
        g["hidden_dim"] = h;
        g["learning_rate"] = lr;
        g["dropout"] = dr;
        grid_runs.push_back(g);
        if (cost < best_cost) {
          best_cost = cost;
          best = std::move(r);
        }
      }
    }
  }
  write_file(fs::path(o.out) / "grid_log.csv", log);
  save_matchnet(best->net, fs::path(o.out) / "model.pmn", run_header(run));
  ordered_json rep;
  rep["run"] = run;
  rep["model"] = "matchnet";
  rep["n_train_pairs"] = best->n_train_pairs;
  rep["n_val_pairs"] = best->n_val_pairs;
  rep["selected"] = report_json(best->report);
  rep["selected"]["hidden_dim"] = best->net.config().hidden_dim;
  rep["selected"]["learning_rate"] = best->net.config().learning_rate;
  rep["selected"]["dropout"] = best->net.config().dropout_rate;
  rep["grid"] = grid_runs;
  write_json(fs::path(o.out) / "train_report.json", rep);
}

// --------------------------------------------------------------------------

struct EvaluateOptions {
  std::string bundle, features, model, out;
  std::uint64_t seed = 0;
  std::vector<int> cutoffs = {10, 30, 100};
  std::vector<std::size_t> buckets = {0, 1, 2, 3, 5};
  int bucket_cutoff = 100;
};

void run_evaluate(const EvaluateOptions& o, ordered_json run) {
  auto bundle = load_bundle(o.bundle);
  run["bundle_checksum"] = bundle_checksum(o.bundle);
  std::cout << "seed=" << o.seed << "\n";

  ExperimentResult result;
  if (o.model == "random") {
    RandomScorer scorer(o.seed);
    result = run_experiment(bundle, scorer, o.cutoffs, o.buckets, o.bucket_cutoff);
  } else {
    auto bytes = read_file(o.model);
    if (bytes.rfind(kWmfMagic, 0) == 0) {
      auto model = deserialize_wmf(bytes);
      WmfScorer scorer(model);
      result = run_experiment(bundle, scorer, o.cutoffs, o.buckets, o.bucket_cutoff);
    } else {
      if (o.features.empty()) throw ConfigError("--features is required for a matchnet model");
      auto features = load_features(o.features);
      auto loaded = deserialize_matchnet(bytes, features.dim());
      MatchNetScorer scorer(loaded.net, features);
      result = run_experiment(bundle, scorer, o.cutoffs, o.buckets, o.bucket_cutoff);
    }
  }
  fs::create_directories(o.out);
  write_report(result, fs::path(o.out) / "report.jsonl", ReportFormat::json_lines, run);
  write_report(result, fs::path(o.out) / "per_playlist.csv", ReportFormat::csv);
  write_file(fs::path(o.out) / "buckets.csv", buckets_to_csv(result.report));
  write_json(fs::path(o.out) / "run.json", run);

  const auto& r = result.report;
  std::cout << "playlists=" << r.n_playlists << " withheld=" << r.n_withheld
            << " median_rank=" << r.median_rank << " map=" << r.map;
  for (const auto& [k, v] : r.mean_recall_at) std::cout << " recall@" << k << "=" << v;
  std::cout << "\n";
  for (const auto& b : r.buckets) {
    std::cout << "  bucket " << std::setw(5) << b.label << " n=" << b.n << " median_rank=" << b.median_rank
              << " recall@" << r.bucket_cutoff << "=" << b.mean_recall << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Playlist continuation experiments"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a clustered synthetic playlist collection");
  synth_cmd->option_defaults()->always_capture_default();
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.config.seed, "Random seed");
  synth_cmd->add_option("--clusters", synth.config.n_clusters, "Number of song clusters");
  synth_cmd->add_option("--songs-per-cluster", synth.config.songs_per_cluster, "Songs in each cluster");
  synth_cmd->add_option("--n-playlists", synth.config.n_playlists, "Playlists to generate");
  synth_cmd->add_option("--playlist-len", synth.config.playlist_len, "Songs per playlist");
  synth_cmd->add_option("--dim", synth.config.dim, "Feature dimension");
  synth_cmd->add_option("--noise-sd", synth.config.noise_sd, "Feature noise around the cluster centre");
  synth_cmd->add_option("--cross-prob", synth.config.cross_cluster_prob, "Chance a slot draws from another cluster");
  synth_cmd->add_option("--locality", synth.config.locality, "Within-cluster neighbour decay (0 = uniform)");
  synth_cmd->add_option("--popularity-sd", synth.config.popularity_sd, "Log-popularity sd (0 = uniform)");
  synth_cmd->add_option("--songs-per-artist", synth.config.songs_per_artist, "Songs credited to each artist");

  PrepareOptions prep;
  auto* prep_cmd = app.add_subcommand("prepare", "Filter a collection and split it into a bundle");
  prep_cmd->option_defaults()->always_capture_default();
  prep_cmd->add_option("--playlists", prep.playlists, "Playlist file")->required();
  prep_cmd->add_option("--features", prep.features, "Feature table")->required();
  prep_cmd->add_option("--mode", prep.mode, "Split mode")->check(CLI::IsMember({"weak", "strong"}));
  prep_cmd->add_option("--seed", prep.seed, "Random seed");
  prep_cmd->add_option("--out", prep.out, "Bundle directory")->required();
  prep_cmd->add_option("--holdout", prep.holdout, "Fraction of songs withheld per playlist");
  prep_cmd->add_option("--playlist-fraction", prep.playlist_fraction, "Query share (strong mode)");
  prep_cmd->add_option("--min-artists", prep.filter.min_artists, "Minimum distinct artists");
  prep_cmd->add_option("--max-per-artist", prep.filter.max_per_artist, "Maximum songs by one artist");
  prep_cmd->add_option("--min-linked", prep.filter.min_linked, "Minimum length before feature lookup");
  prep_cmd->add_option("--min-final", prep.filter.min_final, "Minimum length after dropping unfeatured songs");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a matchnet or WMF model on a bundle");
  train_cmd->option_defaults()->always_capture_default();
  train_cmd->add_option("--bundle", tr.bundle, "Bundle directory")->required();
  train_cmd->add_option("--features", tr.features, "Feature table (matchnet)");
  train_cmd->add_option("--model", tr.model, "Model family")->check(CLI::IsMember({"matchnet", "wmf"}));
  train_cmd->add_option("--seed", tr.seed, "Random seed");
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--hidden-dim", tr.hidden_dims, "H; comma list for a grid")->delimiter(',');
  train_cmd->add_option("--learning-rate", tr.learning_rates, "Adam step size(s)")->delimiter(',');
  train_cmd->add_option("--dropout", tr.dropouts, "Dropout rate(s)")->delimiter(',');
  train_cmd->add_option("--epochs", tr.epochs, "Maximum epochs");
  train_cmd->add_option("--patience", tr.patience, "Epochs without validation gain before stopping");
  train_cmd->add_option("--batch-size", tr.batch_size, "Pairs per batch");
  train_cmd->add_option("--val-fraction", tr.val_fraction, "Share of pairs held out for validation");
  train_cmd->add_flag("--resample-negatives", tr.resample, "Redraw mismatches every epoch");
  train_cmd->add_option("--pairs-out", tr.pairs_out, "Also write the derived pair file");
  train_cmd->add_option("--factors", tr.factors, "Latent factors (WMF)");
  train_cmd->add_option("--sweeps", tr.sweeps, "ALS sweeps (WMF)");
  train_cmd->add_option("--alpha", tr.alphas, "Confidence weight(s)")->delimiter(',');
  train_cmd->add_option("--lambda", tr.lambdas, "L2 weight(s)")->delimiter(',');

  EvaluateOptions ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Run the off-line continuation experiment");
  eval_cmd->option_defaults()->always_capture_default();
  eval_cmd->add_option("--bundle", ev.bundle, "Bundle directory")->required();
  eval_cmd->add_option("--features", ev.features, "Feature table (matchnet models)");
  eval_cmd->add_option("--model", ev.model, "Model file or 'random'")->required();
  eval_cmd->add_option("--seed", ev.seed, "Seed for the random scorer");
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  eval_cmd->add_option("--cutoffs", ev.cutoffs, "Recall cutoffs")->delimiter(',');
  eval_cmd->add_option("--buckets", ev.buckets, "Ascending bucket lower bounds")->delimiter(',');
  eval_cmd->add_option("--bucket-cutoff", ev.bucket_cutoff, "Cutoff for per-bucket recall");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth_cmd) run_synth(synth, echo_options(*synth_cmd));
    if (*prep_cmd) run_prepare(prep, echo_options(*prep_cmd));
    if (*train_cmd) run_train(tr, echo_options(*train_cmd));
    if (*eval_cmd) run_evaluate(ev, echo_options(*eval_cmd));
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
