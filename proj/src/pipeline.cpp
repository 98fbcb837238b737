#include "dsu/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "dsu/discrete_probe.hpp"
#include "dsu/text.hpp"

namespace dsu {
namespace {

bool parse_bool(std::string_view v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ArgumentError("not a boolean: '" + std::string(v) + "'");
}

std::size_t parse_count(std::string_view v) {
  const auto n = parse_int(v);
  if (n < 0) throw ArgumentError("expected a nonnegative integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(n);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::set<std::string> read_id_list(const std::filesystem::path& path) {
  std::set<std::string> ids;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto id = trim(line);
    if (!id.empty()) ids.emplace(id);
  }
  return ids;
}

FeatureArchive subset(const FeatureArchive& archive, const std::set<std::string>& ids) {
  FeatureArchive out;
  out.num_layers = archive.num_layers;
  out.feature_dim = archive.feature_dim;
  for (const auto& utt : archive.utterances) {
    if (ids.contains(utt.id)) out.utterances.push_back(utt);
  }
  return out;
}

std::vector<UnitSequence> select(const std::vector<UnitSequence>& corpus, const std::set<std::string>& ids) {
  std::vector<UnitSequence> out;
  for (const auto& seq : corpus) {
    if (ids.contains(seq.utt_id)) out.push_back(seq);
  }
  return out;
}

std::vector<std::vector<Token>> streams(const std::vector<UnitSequence>& corpus) {
  std::vector<std::vector<Token>> out;
  out.reserve(corpus.size());
  for (const auto& seq : corpus) out.push_back(seq.units);
  return out;
}

// Aggregated features as float frames, the way they would be stored.
std::vector<float> flatten(const Matrix& m) {
  std::vector<float> out(m.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(m.values()[i]);
  return out;
}

class StageTimer {
 public:
  explicit StageTimer(RunReport& report) : report_(report) {}

  template <typename F>
  auto run(const std::string& name, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(body())>) {
        body();
        record(name, start);
      } else {
        auto value = body();
        record(name, start);
        return value;
      }
    } catch (const PipelineError&) {
      throw;
    } catch (const std::exception& e) {
      throw PipelineError(name, e.what());
    }
  }

 private:
  void record(const std::string& name, std::chrono::steady_clock::time_point start) {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    report_.stage_seconds.emplace_back(name, dt.count());
  }
  RunReport& report_;
};

}  // namespace

void PipelineConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  const std::string k(key);
  if (k == "out_dir") out_dir = std::string(value);
  else if (k == "archive") archive = std::string(value);
  else if (k == "transcripts") transcripts = std::string(value);
  else if (k == "durations") durations = std::string(value);
  else if (k == "train_list") train_list = std::string(value);
  else if (k == "test_list") test_list = std::string(value);
  else if (k == "mode") mode = parse_mode(value);
  else if (k == "seed") {
    seed = static_cast<std::uint64_t>(parse_count(value));
    propagate_seed();
  }
  else if (k == "frame_shift") frame_shift_seconds = parse_double(value);
  else if (k == "synth_classes") synth.num_classes = static_cast<std::uint32_t>(parse_count(value));
  else if (k == "synth_layers") synth.num_layers = static_cast<std::uint32_t>(parse_count(value));
  else if (k == "synth_planted") synth.planted_layer = static_cast<std::uint32_t>(parse_count(value));
  else if (k == "synth_dim") synth.feature_dim = static_cast<std::uint32_t>(parse_count(value));
  else if (k == "synth_noise") synth.noise_sigma = parse_double(value);
  else if (k == "synth_frames_per_symbol") synth.frames_per_symbol = static_cast<std::uint32_t>(parse_count(value));
  else if (k == "synth_utts") synth.num_utts = static_cast<std::uint32_t>(parse_count(value));
  else if (k == "synth_min_symbols") synth.min_symbols = static_cast<std::uint32_t>(parse_count(value));
  else if (k == "synth_max_symbols") synth.max_symbols = static_cast<std::uint32_t>(parse_count(value));
  else if (k == "stage1_lr") stage1.learning_rate = parse_double(value);
  else if (k == "stage1_lambda_lr") stage1.lambda_learning_rate = parse_double(value);
  else if (k == "stage1_epochs") stage1.epochs = parse_count(value);
  else if (k == "stage1_batch_size") stage1.batch_size = parse_count(value);
  else if (k == "kmeans_k") kmeans.k = static_cast<std::uint32_t>(parse_count(value));
  else if (k == "kmeans_max_iters") kmeans.max_iters = static_cast<std::uint32_t>(parse_count(value));
  else if (k == "kmeans_tol") kmeans.tolerance = parse_double(value);
  else if (k == "kmeans_sample_cap") {
    const auto cap = parse_count(value);
    kmeans.sample_cap = cap == 0 ? std::nullopt : std::optional<std::size_t>(cap);
  }
  else if (k == "dedup") dedup = parse_bool(value);
  else if (k == "bpe_merges") bpe_merges = parse_count(value);
  else if (k == "stage2_lr") stage2.learning_rate = parse_double(value);
  else if (k == "stage2_epochs") stage2.epochs = parse_count(value);
  else if (k == "stage2_batch_size") stage2.batch_size = parse_count(value);
  else if (k == "embed_dim") embed_dim = parse_count(value);
  else throw ArgumentError("unknown config key '" + k + "'");
}

void PipelineConfig::load(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    const auto body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw FormatError("config line without '=': " + line);
    set(body.substr(0, eq), body.substr(eq + 1));
  }
}

void PipelineConfig::load(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  load(in);
}

void PipelineConfig::propagate_seed() {
  synth.seed = seed;
  stage1.seed = seed;
  kmeans.seed = seed;
  stage2.seed = seed;
}

const VariantReport& RunReport::variant(std::string_view name) const {
  for (const auto& v : variants) {
    if (v.name == name) return v;
  }
  throw ArgumentError("no variant named '" + std::string(name) + "'");
}

std::vector<std::pair<std::string, std::string>> RunReport::key_values() const {
  std::vector<std::pair<std::string, std::string>> kv;
  auto add = [&](std::string k, std::string v) { kv.emplace_back(std::move(k), std::move(v)); };
  add("mode", std::string(to_string(mode)));
  add("train_utts", std::to_string(train_utts));
  add("test_utts", std::to_string(test_utts));
  add("total_frames", std::to_string(total_frames));
  add("total_seconds", format_double(total_seconds));
  for (std::size_t i = 0; i < layer_weights.size(); ++i) {
    const bool extra = mode == AggregationMode::pretrained && i + 1 == layer_weights.size();
    add(extra ? "weight_final_norm" : "weight_layer_" + std::to_string(i + 1), format_double(layer_weights[i]));
  }
  add("weight_argmax", std::to_string(weight_argmax));
  add("stage1_final_loss", stage1_loss.empty() ? "none" : format_double(stage1_loss.back()));
  add("stage1_skipped", std::to_string(stage1_skipped));
  add("weights_hash_stage1", weights_hash_stage1);
  add("weights_hash_after_stage2", weights_hash_after_stage2);
  add("weights_frozen", weights_hash_stage1 == weights_hash_after_stage2 ? "1" : "0");
  add("continuous_cer", format_double(continuous_cer));
  add("kmeans_iterations", std::to_string(kmeans_distortion.size()));
  add("kmeans_final_distortion", kmeans_distortion.empty() ? "none" : format_double(kmeans_distortion.back()));
  for (const auto& v : variants) {
    add(v.name + "_tokens", std::to_string(v.tokens));
    add(v.name + "_vocab", std::to_string(v.vocab_size));
    add(v.name + "_upsample", std::to_string(v.upsample));
    add(v.name + "_bitrate", format_double(v.bitrate));
    add(v.name + "_cer", format_double(v.cer));
    add(v.name + "_gap_percent", v.gap_percent ? format_double(*v.gap_percent) : "undefined");
    add(v.name + "_skipped", std::to_string(v.skipped));
  }
  return kv;
}

void RunReport::write_key_values(std::ostream& out) const {
  for (const auto& [k, v] : key_values()) out << k << '=' << v << '\n';
}

void RunReport::write_summary(std::ostream& out) const {
  char buf[256];
  out << "mode: " << to_string(mode) << "\n";
  out << "utterances: " << train_utts << " train / " << test_utts << " test\n";
  out << "layer weights:";
  for (double w : layer_weights) {
    std::snprintf(buf, sizeof(buf), " %.4f", w);
    out << buf;
  }
  out << "  (argmax " << weight_argmax << ")\n";
  out << "weights frozen: " << (weights_hash_stage1 == weights_hash_after_stage2 ? "yes" : "NO") << "\n";
  std::snprintf(buf, sizeof(buf), "continuous CER: %.2f%%\n", continuous_cer);
  out << buf;
  out << "variant      tokens   vocab   bitrate(b/s)     CER%   gap%  skipped\n";
  for (const auto& v : variants) {
    std::string gap = "n/a";
    if (v.gap_percent) {
      std::snprintf(buf, sizeof(buf), "%.1f", *v.gap_percent);
      gap = buf;
    }
    std::snprintf(buf, sizeof(buf), "%-10s %8zu %7zu %14.1f %8.2f %6s %8zu\n", v.name.c_str(), v.tokens,
                  v.vocab_size, v.bitrate, v.cer, gap.c_str(), v.skipped);
    out << buf;
  }
  out << "stage wall-clock:\n";
  for (const auto& [name, secs] : stage_seconds) {
    std::snprintf(buf, sizeof(buf), "  %-12s %8.3f s\n", name.c_str(), secs);
    out << buf;
  }
}

bool is_test_utterance(std::string_view utt_id) { return (fnv1a(utt_id) & 0xFF) % 5 == 0; }

void export_weight_csv(const LayerWeights& weights, std::ostream& out) {
  const auto w = softmax_weights(weights.lambdas);
  out << "layer_index,weight\n";
  for (std::size_t i = 0; i < w.size(); ++i) {
    const bool extra = weights.mode == AggregationMode::pretrained && i + 1 == w.size();
    out << (extra ? std::string("final_norm") : std::to_string(i + 1)) << ',' << format_double(w[i]) << '\n';
  }
}

void export_weight_csv(const LayerWeights& weights, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  export_weight_csv(weights, out);
}

RunReport run_pipeline(const PipelineConfig& config) {
  if (config.out_dir.empty()) throw ArgumentError("pipeline needs out_dir");
  RunReport report;
  report.mode = config.mode;
  StageTimer stage(report);
  const auto& dir = config.out_dir;

  struct Corpus {
    FeatureArchive archive;
    TextTable transcripts;
    TextTable durations;
  };

  auto corpus = stage.run("ingest", [&] {
    std::filesystem::create_directories(dir);
    Corpus c;
    if (config.archive.empty()) {
      auto synth = synth_generate(config.synth);
      c.archive = std::move(synth.archive);
      c.transcripts = std::move(synth.transcripts);
      c.durations = std::move(synth.durations);
      save_archive(c.archive, dir / "archive.dsua");
      write_tsv(dir / "transcripts.tsv", c.transcripts);
      write_tsv(dir / "durations.tsv", c.durations);
    } else {
      c.archive = load_archive(config.archive);
      if (config.transcripts.empty()) throw ArgumentError("transcripts path required with an archive");
      c.transcripts = read_tsv(config.transcripts);
      if (!config.durations.empty()) {
        c.durations = read_tsv(config.durations);
      } else {
        for (const auto& utt : c.archive.utterances) {
          c.durations.emplace(utt.id, format_double(utt.num_frames * config.frame_shift_seconds));
        }
      }
    }
    return c;
  });

  std::set<std::string> train_ids;
  std::set<std::string> test_ids;
  stage.run("split", [&] {
    if (!config.train_list.empty() || !config.test_list.empty()) {
      if (config.train_list.empty() || config.test_list.empty()) {
        throw ArgumentError("train_list and test_list must be given together");
      }
      train_ids = read_id_list(config.train_list);
      test_ids = read_id_list(config.test_list);
    } else {
      for (const auto& utt : corpus.archive.utterances) {
        (is_test_utterance(utt.id) ? test_ids : train_ids).insert(utt.id);
      }
    }
    if (train_ids.empty() || test_ids.empty()) throw ArgumentError("split produced an empty train or test set");
    for (const auto& utt : corpus.archive.utterances) {
      report.total_frames += utt.num_frames;
      const auto it = corpus.durations.find(utt.id);
      if (it == corpus.durations.end()) throw ArgumentError("no duration for " + utt.id);
      report.total_seconds += parse_double(it->second);
    }
  });
  const FeatureArchive train = subset(corpus.archive, train_ids);
  const FeatureArchive test = subset(corpus.archive, test_ids);
  report.train_utts = train.utterances.size();
  report.test_utts = test.utterances.size();

  const auto weights_path = dir / "weights.txt";
  stage.run("stage1", [&] {
    auto result = train_stage1(train, corpus.transcripts, config.mode, config.stage1);
    save_weights(result.weights, weights_path);
    save_probe(result.model, dir / "stage1_probe.txt");
    export_weight_csv(result.weights, dir / "weights.csv");
    report.stage1_loss = result.loss_history;
    report.stage1_skipped = result.skipped;
    report.weights_hash_stage1 = hex64(fnv1a_file(weights_path));
    if (load_weights(weights_path) != result.weights) {
      throw TrainingError("weights did not survive serialization bit-exactly");
    }
  });

  // Stage 2 only ever sees the reloaded, frozen weights.
  const LayerWeights frozen = stage.run("freeze", [&] { return load_weights(weights_path); });
  report.layer_weights = softmax_weights(frozen.lambdas);
  report.weight_argmax =
      static_cast<std::size_t>(std::max_element(report.layer_weights.begin(), report.layer_weights.end()) -
                               report.layer_weights.begin()) + 1;

  stage.run("continuous", [&] {
    const auto model = load_probe(dir / "stage1_probe.txt");
    report.continuous_cer = evaluate_continuous(frozen, model, test, corpus.transcripts);
  });

  std::map<std::string, std::vector<float>> aggregated;
  const Codebook codebook = stage.run("kmeans", [&] {
    std::vector<float> train_frames;
    for (const auto& utt : corpus.archive.utterances) {
      auto frames = flatten(weighted_sum(corpus.archive.stack(utt), frozen));
      if (train_ids.contains(utt.id)) train_frames.insert(train_frames.end(), frames.begin(), frames.end());
      aggregated.emplace(utt.id, std::move(frames));
    }
    auto result = kmeans_train(train_frames, corpus.archive.feature_dim, config.kmeans);
    save_codebook(result.codebook, dir / "codebook.dsuk");
    report.kmeans_distortion = result.distortion_history;
    return result.codebook;
  });

  struct Variant {
    std::string name;
    std::vector<UnitSequence> units;
    std::size_t vocab_size;
    std::size_t upsample;
  };
  std::vector<Variant> variants;

  stage.run("tokenize", [&] {
    std::vector<UnitSequence> raw;
    for (const auto& utt : corpus.archive.utterances) {
      raw.push_back({utt.id, assign(aggregated.at(utt.id), corpus.archive.feature_dim, codebook)});
    }
    write_units(dir / "units_raw.tsv", raw);
    variants.push_back({"raw", raw, codebook.k, 1});
    if (config.dedup) {
      std::vector<UnitSequence> deduped;
      for (const auto& seq : raw) deduped.push_back(dedup(seq));
      write_units(dir / "units_dedup.tsv", deduped);
      variants.push_back({"dedup", std::move(deduped), codebook.k, 1});
    }
    if (config.bpe_merges > 0) {
      const auto& base = variants.back().units;
      const auto train_streams = streams(select(base, train_ids));
      const auto bpe = bpe_train(train_streams, codebook.k, config.bpe_merges);
      save_bpe(bpe, dir / "bpe.txt");
      std::vector<UnitSequence> encoded;
      for (const auto& seq : base) encoded.push_back({seq.utt_id, bpe_encode(seq.units, bpe)});
      write_units(dir / "units_bpe.tsv", encoded);
      variants.push_back({config.dedup ? "dedup_bpe" : "bpe", std::move(encoded), bpe.vocab_size(), bpe.max_span()});
    }
  });

  for (const auto& v : variants) {
    stage.run("discrete_" + v.name, [&] {
      VariantReport vr;
      vr.name = v.name;
      vr.vocab_size = v.vocab_size;
      vr.upsample = v.upsample;
      const auto all_streams = streams(v.units);
      for (const auto& s : all_streams) vr.tokens += s.size();
      vr.bitrate = bitrate(all_streams, std::max<std::size_t>(v.vocab_size, 2), report.total_seconds);
      DiscreteOptions options;
      options.embed_dim = config.embed_dim;
      options.upsample = v.upsample;
      const auto trained = train_discrete(select(v.units, train_ids), corpus.transcripts, v.vocab_size,
                                          config.stage2, options);
      save_discrete_probe(trained.model, dir / ("discrete_" + v.name + ".txt"));
      const auto eval = evaluate_discrete(trained.model, select(v.units, test_ids), corpus.transcripts);
      vr.cer = eval.cer;
      vr.skipped = trained.skipped + eval.skipped;
      if (report.continuous_cer > 0.0) vr.gap_percent = gap_report(report.continuous_cer, vr.cer);
      report.variants.push_back(vr);
    });
  }

  stage.run("report", [&] {
    report.weights_hash_after_stage2 = hex64(fnv1a_file(weights_path));
    std::ofstream kv(dir / "report.txt");
    report.write_key_values(kv);
    std::ofstream timings(dir / "timings.txt");
    for (const auto& [name, secs] : report.stage_seconds) timings << name << '=' << format_double(secs) << '\n';
    std::ofstream summary(dir / "summary.txt");
    report.write_summary(summary);
  });
  return report;
}

}  // namespace dsu
