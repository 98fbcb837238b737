// dsu: command-line front end for the discrete speech unit pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dsu/aggregator.hpp"
#include "dsu/discrete_probe.hpp"
#include "dsu/feature_store.hpp"
#include "dsu/metrics.hpp"
#include "dsu/pipeline.hpp"
#include "dsu/probe.hpp"
#include "dsu/quantizer.hpp"
#include "dsu/text.hpp"
#include "dsu/tokenproc.hpp"

namespace fs = std::filesystem;
using namespace dsu;

namespace {

std::vector<float> aggregate_frames(const FeatureArchive& archive, const Utterance& utt,
                                    const std::optional<LayerWeights>& weights) {
  if (!weights) {
    const auto stack = archive.stack(utt);
    return {stack.values.begin(), stack.values.end()};
  }
  const Matrix h = weighted_sum(archive.stack(utt), *weights);
  std::vector<float> out(h.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(h.values()[i]);
  return out;
}

std::optional<LayerWeights> weights_for(const FeatureArchive& archive, const std::string& path) {
  if (path.empty()) {
    if (archive.num_layers != 1) {
      throw ArgumentError("archive has " + std::to_string(archive.num_layers) + " layers; pass --weights");
    }
    return std::nullopt;
  }
  auto w = load_weights(path);
  w.check_compatible(archive.num_layers, archive.feature_dim);
  return w;
}

std::vector<std::vector<Token>> streams_of(const std::vector<UnitSequence>& corpus) {
  std::vector<std::vector<Token>> out;
  for (const auto& s : corpus) out.push_back(s.units);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete speech unit pipeline: layer weighting, k-means units, dedup/BPE, CTC probes"};
  app.require_subcommand(1);

  // gen-synth
  SynthSpec synth;
  std::string synth_out;
  std::string synth_transcripts;
  std::string synth_durations;
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic corpus with one planted informative layer");
  gen->add_option("--classes", synth.num_classes, "Number of symbol classes (2-26)");
  gen->add_option("--layers", synth.num_layers, "Number of layers L");
  gen->add_option("--planted", synth.planted_layer, "1-based informative layer");
  gen->add_option("--dim", synth.feature_dim, "Feature dimension D");
  gen->add_option("--noise", synth.noise_sigma, "Noise sigma on the planted layer");
  gen->add_option("--seed", synth.seed, "RNG seed");
  gen->add_option("--utts", synth.num_utts, "Number of utterances");
  gen->add_option("--frames-per-symbol", synth.frames_per_symbol, "Frames per symbol r");
  gen->add_option("--min-symbols", synth.min_symbols);
  gen->add_option("--max-symbols", synth.max_symbols);
  gen->add_option("--out", synth_out, "Archive path")->required();
  gen->add_option("--transcripts", synth_transcripts, "Transcript sidecar (default <out>.transcripts.tsv)");
  gen->add_option("--durations", synth_durations, "Duration sidecar (default <out>.durations.tsv)");

  // export-weights
  std::string ew_weights;
  std::string ew_out;
  auto* export_weights = app.add_subcommand("export-weights", "Write softmax layer weights as CSV");
  export_weights->add_option("--weights", ew_weights)->required();
  export_weights->add_option("--out", ew_out, "CSV path (stdout when omitted)");

  // train-weights
  std::string tw_archive, tw_transcripts, tw_mode = "finetuned", tw_out_weights, tw_out_model, tw_csv;
  TrainConfig tw_config;
  auto* train_weights = app.add_subcommand("train-weights", "Stage 1: learn layer weights with a continuous CTC probe");
  train_weights->add_option("--archive", tw_archive)->required();
  train_weights->add_option("--transcripts", tw_transcripts)->required();
  train_weights->add_option("--mode", tw_mode)->check(CLI::IsMember({"pretrained", "finetuned"}));
  train_weights->add_option("--out-weights", tw_out_weights)->required();
  train_weights->add_option("--out-model", tw_out_model)->required();
  train_weights->add_option("--out-csv", tw_csv, "Also write the weight CSV");
  train_weights->add_option("--lr", tw_config.learning_rate);
  train_weights->add_option("--lambda-lr", tw_config.lambda_learning_rate);
  train_weights->add_option("--epochs", tw_config.epochs);
  train_weights->add_option("--batch-size", tw_config.batch_size);
  train_weights->add_option("--seed", tw_config.seed);

  // eval-continuous
  std::string ec_archive, ec_transcripts, ec_weights, ec_model;
  auto* eval_cont = app.add_subcommand("eval-continuous", "CER of a Stage-1 probe on an archive");
  eval_cont->add_option("--archive", ec_archive)->required();
  eval_cont->add_option("--transcripts", ec_transcripts)->required();
  eval_cont->add_option("--weights", ec_weights)->required();
  eval_cont->add_option("--model", ec_model)->required();

  // train-kmeans
  std::string km_features, km_weights, km_out;
  KmeansConfig km_config;
  std::size_t km_cap = 0;
  auto* train_kmeans = app.add_subcommand("train-kmeans", "Train a k-means codebook on aggregated features");
  train_kmeans->add_option("--features", km_features, "Feature archive")->required();
  train_kmeans->add_option("--weights", km_weights, "Layer weights (required unless the archive has one layer)");
  train_kmeans->add_option("--k", km_config.k);
  train_kmeans->add_option("--seed", km_config.seed);
  train_kmeans->add_option("--max-iters", km_config.max_iters);
  train_kmeans->add_option("--tol", km_config.tolerance);
  train_kmeans->add_option("--sample-cap", km_cap, "Subsample at most this many frames (0 = all)");
  train_kmeans->add_option("--out", km_out)->required();

  // tokenize
  std::string tk_archive, tk_weights, tk_codebook, tk_out;
  auto* tokenize = app.add_subcommand("tokenize", "Assign every frame to its nearest centroid");
  tokenize->add_option("--archive", tk_archive)->required();
  tokenize->add_option("--weights", tk_weights);
  tokenize->add_option("--codebook", tk_codebook)->required();
  tokenize->add_option("--out", tk_out)->required();

  // dedup
  std::string dd_in, dd_out;
  auto* dedup_cmd = app.add_subcommand("dedup", "Collapse runs of repeated units");
  dedup_cmd->add_option("--in", dd_in)->required();
  dedup_cmd->add_option("--out", dd_out)->required();

  // bpe-train
  std::string bt_units, bt_out;
  std::size_t bt_merges = kDefaultBpeMerges;
  std::size_t bt_base = 0;
  auto* bpe_train_cmd = app.add_subcommand("bpe-train", "Learn BPE merges over unit streams");
  bpe_train_cmd->add_option("--units", bt_units)->required();
  bpe_train_cmd->add_option("--merges", bt_merges);
  bpe_train_cmd->add_option("--base", bt_base, "Base vocabulary size (default: max unit + 1)");
  bpe_train_cmd->add_option("--out", bt_out)->required();

  // bpe-apply
  std::string ba_units, ba_model, ba_out;
  bool ba_decode = false;
  auto* bpe_apply = app.add_subcommand("bpe-apply", "Encode (or decode) unit streams with a BPE model");
  bpe_apply->add_option("--units", ba_units)->required();
  bpe_apply->add_option("--model", ba_model)->required();
  bpe_apply->add_option("--out", ba_out)->required();
  bpe_apply->add_flag("--decode", ba_decode);

  // bitrate
  std::string br_units, br_durations;
  std::size_t br_vocab = 0;
  auto* bitrate_cmd = app.add_subcommand("bitrate", "Fixed-width bitrate of a token file");
  bitrate_cmd->add_option("--units", br_units)->required();
  bitrate_cmd->add_option("--vocab", br_vocab)->required();
  bitrate_cmd->add_option("--duration-file", br_durations)->required();

  // train-discrete
  std::string td_units, td_transcripts, td_out;
  std::size_t td_vocab = 0;
  TrainConfig td_config;
  DiscreteOptions td_options;
  std::string td_bpe;
  auto* train_disc = app.add_subcommand("train-discrete", "Train the embedding + CTC probe on discrete tokens");
  train_disc->add_option("--units", td_units)->required();
  train_disc->add_option("--transcripts", td_transcripts)->required();
  train_disc->add_option("--vocab", td_vocab)->required();
  train_disc->add_option("--out", td_out)->required();
  train_disc->add_option("--lr", td_config.learning_rate);
  train_disc->add_option("--epochs", td_config.epochs);
  train_disc->add_option("--batch-size", td_config.batch_size);
  train_disc->add_option("--seed", td_config.seed);
  train_disc->add_option("--embed-dim", td_options.embed_dim);
  train_disc->add_option("--upsample", td_options.upsample, "Output frames per token");
  train_disc->add_option("--bpe-model", td_bpe, "Set --upsample from the model's longest token");

  // eval-cer
  std::string ev_model, ev_units, ev_transcripts, ev_hyp_out;
  auto* eval_cer = app.add_subcommand("eval-cer", "CER of a discrete probe");
  eval_cer->add_option("--model", ev_model)->required();
  eval_cer->add_option("--units", ev_units)->required();
  eval_cer->add_option("--transcripts", ev_transcripts)->required();
  eval_cer->add_option("--hyp-out", ev_hyp_out, "Write hypotheses as utt_id<TAB>text");

  // cer
  std::string cer_ref, cer_hyp;
  bool cer_verbose = false;
  auto* cer_cmd = app.add_subcommand("cer", "Corpus CER between two utt_id<TAB>text files");
  cer_cmd->add_option("--ref", cer_ref)->required();
  cer_cmd->add_option("--hyp", cer_hyp)->required();
  cer_cmd->add_flag("--verbose", cer_verbose);

  // run
  std::string run_config;
  std::vector<std::string> run_sets;
  std::string run_out;
  std::int64_t run_seed = -1;
  auto* run = app.add_subcommand("run", "Run the full two-stage pipeline");
  run->add_option("--config", run_config)->required();
  run->add_option("--set", run_sets, "Override a config key: key=value (repeatable)");
  run->add_option("--out-dir", run_out);
  run->add_option("--seed", run_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto corpus = synth_generate(synth);
      save_archive(corpus.archive, synth_out);
      write_tsv(synth_transcripts.empty() ? synth_out + ".transcripts.tsv" : synth_transcripts, corpus.transcripts);
      write_tsv(synth_durations.empty() ? synth_out + ".durations.tsv" : synth_durations, corpus.durations);
      std::printf("wrote %zu utterances (L=%u D=%u) to %s\n", corpus.archive.utterances.size(),
                  corpus.archive.num_layers, corpus.archive.feature_dim, synth_out.c_str());
    } else if (*export_weights) {
      const auto w = load_weights(ew_weights);
      if (ew_out.empty()) export_weight_csv(w, std::cout);
      else export_weight_csv(w, fs::path(ew_out));
    } else if (*train_weights) {
      const auto archive = load_archive(tw_archive);
      const auto transcripts = read_tsv(tw_transcripts);
      const auto result = train_stage1(archive, transcripts, parse_mode(tw_mode), tw_config);
      save_weights(result.weights, tw_out_weights);
      save_probe(result.model, tw_out_model);
      if (!tw_csv.empty()) export_weight_csv(result.weights, fs::path(tw_csv));
      for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
        std::printf("epoch %zu loss %.6f\n", e + 1, result.loss_history[e]);
      }
      if (result.skipped) std::fprintf(stderr, "warning: skipped %zu infeasible utterances\n", result.skipped);
      export_weight_csv(result.weights, std::cout);
    } else if (*eval_cont) {
      const auto archive = load_archive(ec_archive);
      const double cer = evaluate_continuous(load_weights(ec_weights), load_probe(ec_model), archive,
                                             read_tsv(ec_transcripts));
      std::printf("CER=%.4f%%\n", cer);
    } else if (*train_kmeans) {
      const auto archive = load_archive(km_features);
      const auto weights = weights_for(archive, km_weights);
      std::vector<float> frames;
      for (const auto& utt : archive.utterances) {
        const auto f = aggregate_frames(archive, utt, weights);
        frames.insert(frames.end(), f.begin(), f.end());
      }
      if (km_cap > 0) km_config.sample_cap = km_cap;
      const auto result = kmeans_train(frames, archive.feature_dim, km_config);
      save_codebook(result.codebook, km_out);
      std::printf("k=%u iterations=%zu distortion=%.6g\n", result.codebook.k, result.distortion_history.size(),
                  result.distortion_history.back());
    } else if (*tokenize) {
      const auto archive = load_archive(tk_archive);
      const auto weights = weights_for(archive, tk_weights);
      const auto codebook = load_codebook(tk_codebook);
      std::vector<UnitSequence> units;
      for (const auto& utt : archive.utterances) {
        units.push_back({utt.id, assign(aggregate_frames(archive, utt, weights), archive.feature_dim, codebook)});
      }
      write_units(tk_out, units);
    } else if (*dedup_cmd) {
      auto corpus = read_units(dd_in);
      for (auto& seq : corpus) seq = dedup(seq);
      write_units(dd_out, corpus);
    } else if (*bpe_train_cmd) {
      const auto corpus = read_units(bt_units);
      std::size_t base = bt_base;
      if (base == 0) {
        for (const auto& seq : corpus) {
          for (auto u : seq.units) base = std::max(base, static_cast<std::size_t>(u) + 1);
        }
      }
      const auto model = bpe_train(streams_of(corpus), base, bt_merges);
      save_bpe(model, bt_out);
      std::printf("base=%zu merges=%zu vocab=%zu\n", model.base_vocab_size(), model.merges().size(),
                  model.vocab_size());
    } else if (*bpe_apply) {
      const auto model = load_bpe(ba_model);
      auto corpus = read_units(ba_units);
      for (auto& seq : corpus) seq.units = ba_decode ? bpe_decode(seq.units, model) : bpe_encode(seq.units, model);
      write_units(ba_out, corpus);
    } else if (*bitrate_cmd) {
      const auto corpus = read_units(br_units);
      const auto durations = read_tsv(br_durations);
      double seconds = 0.0;
      for (const auto& seq : corpus) {
        const auto it = durations.find(seq.utt_id);
        if (it == durations.end()) throw ArgumentError("no duration for " + seq.utt_id);
        seconds += parse_double(it->second);
      }
      std::printf("bitrate=%.6f bits/s\n", bitrate(streams_of(corpus), br_vocab, seconds));
    } else if (*train_disc) {
      if (!td_bpe.empty()) td_options.upsample = load_bpe(td_bpe).max_span();
      const auto corpus = read_units(td_units);
      const auto result = train_discrete(corpus, read_tsv(td_transcripts), td_vocab, td_config, td_options);
      save_discrete_probe(result.model, td_out);
      for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
        std::printf("epoch %zu loss %.6f\n", e + 1, result.loss_history[e]);
      }
      if (result.skipped) std::fprintf(stderr, "warning: skipped %zu infeasible utterances\n", result.skipped);
    } else if (*eval_cer) {
      const auto model = load_discrete_probe(ev_model);
      const auto corpus = read_units(ev_units);
      const auto eval = evaluate_discrete(model, corpus, read_tsv(ev_transcripts));
      if (!ev_hyp_out.empty()) write_tsv(ev_hyp_out, transcribe_discrete(model, corpus));
      std::printf("CER=%.4f%%\nskipped=%zu\n", eval.cer, eval.skipped);
    } else if (*cer_cmd) {
      const auto refs = read_tsv(cer_ref);
      const auto hyps = read_tsv(cer_hyp);
      std::vector<EvalPair> pairs;
      for (const auto& [id, ref] : refs) {
        const auto it = hyps.find(id);
        pairs.push_back({id, ref, it == hyps.end() ? std::string{} : it->second});
      }
      if (cer_verbose) {
        for (const auto& p : pairs) {
          const auto b = edit_breakdown(utf8_decode(p.reference), utf8_decode(p.hypothesis));
          std::printf("%s\tS=%zu I=%zu D=%zu N=%zu\n", p.utt_id.c_str(), b.substitutions, b.insertions,
                      b.deletions, utf8_decode(p.reference).size());
        }
      }
      const auto stats = corpus_cer_stats(pairs);
      std::printf("CER=%.4f%%\n", stats.percent());
      if (cer_verbose) {
        std::printf("S=%zu I=%zu D=%zu N=%zu\n", stats.breakdown.substitutions, stats.breakdown.insertions,
                    stats.breakdown.deletions, stats.reference_length);
      }
    } else if (*run) {
      PipelineConfig config;
      config.load(fs::path(run_config));
      for (const auto& kv : run_sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ArgumentError("--set expects key=value, got '" + kv + "'");
        config.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (!run_out.empty()) config.out_dir = run_out;
      if (run_seed >= 0) config.set("seed", std::to_string(run_seed));
      const auto report = run_pipeline(config);
      report.write_summary(std::cout);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dsu: %s\n", e.what());
    return 1;
  }
  return 0;
}
