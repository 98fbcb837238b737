#include "dsu/discrete_probe.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <string>

#include "training.hpp"

namespace dsu {
namespace {

void check_tokens(std::span<const Token> tokens, std::size_t vocab_size, const std::string& id) {
  for (Token t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
      throw ArgumentError("token " + std::to_string(t) + " in " + id + " outside vocabulary of size " +
                          std::to_string(vocab_size));
    }
  }
}

std::vector<double> parse_row(const std::string& line, std::size_t expected, const char* what) {
  std::vector<double> row;
  for (auto tok : split_ws(line)) row.push_back(parse_double(tok));
  if (row.size() != expected) throw FormatError(std::string("discrete probe: wrong width in ") + what);
  for (double v : row) {
    if (!std::isfinite(v)) throw ValidationError("discrete probe: non-finite parameter");
  }
  return row;
}

}  // namespace

Matrix DiscreteProbeModel::forward(std::span<const Token> tokens) const {
  check_tokens(tokens, token_vocab_size(), "input");
  const std::size_t V = output_dim();
  const std::size_t E = embed_dim();
  Matrix logits(tokens.size() * upsample, V);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto e = embedding.row(static_cast<std::size_t>(tokens[i]));
    for (std::size_t j = 0; j < upsample; ++j) {
      auto out = logits.row(i * upsample + j);
      std::copy(bias.begin(), bias.end(), out.begin());
      for (std::size_t d = 0; d < E; ++d) {
        const auto w = projection.row(d).subspan(j * V, V);
        for (std::size_t v = 0; v < V; ++v) out[v] += e[d] * w[v];
      }
    }
  }
  return logits;
}

void write_discrete_probe(const DiscreteProbeModel& model, std::ostream& out) {
  const std::size_t V = model.output_dim();
  out << "dsu-probe v1 " << model.embed_dim() << ' ' << V << '\n';
  auto write_matrix = [&](const Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto row = m.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? " " : "") << format_double(row[c]);
      out << '\n';
    }
  };
  write_matrix(model.projection);
  for (std::size_t v = 0; v < V; ++v) out << (v ? " " : "") << format_double(model.bias[v]);
  out << '\n';
  const auto& sym = model.vocab.symbols();
  for (std::size_t i = 0; i < sym.size(); ++i) out << (i ? " " : "") << static_cast<std::uint32_t>(sym[i]);
  out << '\n';
  out << "embedding " << model.token_vocab_size() << ' ' << model.embed_dim() << ' ' << model.upsample << '\n';
  write_matrix(model.embedding);
}

DiscreteProbeModel read_discrete_probe(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("discrete probe: empty file");
  const auto head = split_ws(line);
  if (head.size() != 4 || head[0] != "dsu-probe") throw FormatError("discrete probe: bad header");
  if (head[1] != "v1") throw UnsupportedVersionError("discrete probe: unsupported version");
  const auto E = static_cast<std::size_t>(parse_int(head[2]));
  const auto V = static_cast<std::size_t>(parse_int(head[3]));

  std::vector<std::string> w_rows(E);
  for (auto& row : w_rows) {
    if (!std::getline(in, row)) throw CorruptionError("discrete probe: truncated projection");
  }
  DiscreteProbeModel model;
  if (!std::getline(in, line)) throw CorruptionError("discrete probe: missing bias");
  model.bias = parse_row(line, V, "bias");
  if (!std::getline(in, line)) throw CorruptionError("discrete probe: missing vocab");
  std::u32string symbols;
  for (auto tok : split_ws(line)) symbols.push_back(static_cast<char32_t>(parse_int(tok)));
  model.vocab = LabelVocab(std::move(symbols));
  if (model.vocab.size() != V) throw ValidationError("discrete probe: vocab size does not match V");

  if (!std::getline(in, line)) throw FormatError("discrete probe: missing embedding block");
  const auto emb = split_ws(line);
  if (emb.size() != 4 || emb[0] != "embedding") throw FormatError("discrete probe: bad embedding header");
  const auto N = static_cast<std::size_t>(parse_int(emb[1]));
  if (static_cast<std::size_t>(parse_int(emb[2])) != E) throw ValidationError("discrete probe: embedding dim mismatch");
  model.upsample = static_cast<std::size_t>(parse_int(emb[3]));
  if (model.upsample == 0) throw ValidationError("discrete probe: upsample must be >= 1");

  model.projection = Matrix(E, model.upsample * V);
  for (std::size_t d = 0; d < E; ++d) {
    const auto row = parse_row(w_rows[d], model.upsample * V, "projection");
    std::copy(row.begin(), row.end(), model.projection.row(d).begin());
  }
  model.embedding = Matrix(N, E);
  for (std::size_t n = 0; n < N; ++n) {
    if (!std::getline(in, line)) throw CorruptionError("discrete probe: truncated embedding");
    const auto row = parse_row(line, E, "embedding");
    std::copy(row.begin(), row.end(), model.embedding.row(n).begin());
  }
  return model;
}

void save_discrete_probe(const DiscreteProbeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_discrete_probe(model, out);
}

DiscreteProbeModel load_discrete_probe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_discrete_probe(in);
}

DiscreteTrainResult train_discrete(std::span<const UnitSequence> corpus, const TextTable& transcripts,
                                   std::size_t vocab_size, const TrainConfig& config, const DiscreteOptions& options) {
  config.validate();
  if (corpus.empty()) throw ArgumentError("train_discrete needs a non-empty corpus");
  if (vocab_size == 0) throw ArgumentError("vocab_size must be >= 1");
  if (options.embed_dim == 0 || options.upsample == 0) throw ArgumentError("embed_dim and upsample must be >= 1");

  TextTable used;
  for (const auto& seq : corpus) {
    check_tokens(seq.units, vocab_size, seq.utt_id);
    const auto it = transcripts.find(seq.utt_id);
    if (it == transcripts.end()) throw ArgumentError("no transcript for " + seq.utt_id);
    if (!used.emplace(seq.utt_id, it->second).second) throw ArgumentError("duplicate utterance " + seq.utt_id);
  }

  DiscreteTrainResult result;
  auto& model = result.model;
  model.vocab = LabelVocab::from_transcripts(used);
  model.upsample = options.upsample;
  const std::size_t E = options.embed_dim;
  const std::size_t V = model.vocab.size();
  const std::size_t R = options.upsample;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> emb_init(0.0, 1.0 / std::sqrt(static_cast<double>(E)));
  model.embedding = Matrix(vocab_size, E);
  for (auto& x : model.embedding.values()) x = emb_init(rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(E));
  std::uniform_real_distribution<double> w_init(-bound, bound);
  model.projection = Matrix(E, R * V);
  for (auto& x : model.projection.values()) x = w_init(rng);
  model.bias.assign(V, 0.0);

  std::vector<std::size_t> kept;
  std::vector<std::vector<Label>> targets(corpus.size());
  for (std::size_t u = 0; u < corpus.size(); ++u) {
    targets[u] = model.vocab.encode_utf8(used.at(corpus[u].utt_id));
    if (corpus[u].units.empty() || ctc_min_frames(targets[u]) > corpus[u].units.size() * R) {
      ++result.skipped;
    } else {
      kept.push_back(u);
    }
  }
  if (kept.empty()) throw TrainingError("every utterance has an infeasible CTC target");

  std::vector<std::size_t> lengths;
  std::vector<std::string> ids;
  for (auto u : kept) {
    lengths.push_back(corpus[u].units.size());
    ids.push_back(corpus[u].utt_id);
  }
  auto batches = detail::length_batches(lengths, ids, config.batch_size);

  detail::Adam adam_e(model.embedding.values().size(), config.learning_rate, config);
  detail::Adam adam_w(model.projection.values().size(), config.learning_rate, config);
  detail::Adam adam_b(V, config.learning_rate, config);
  Matrix grad_e(vocab_size, E);
  Matrix grad_w(E, R * V);
  std::vector<double> grad_b(V);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(batches.begin(), batches.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    for (const auto& batch : batches) {
      grad_e.fill(0.0);
      grad_w.fill(0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      for (auto slot : batch) {
        const std::size_t u = kept[slot];
        const auto& tokens = corpus[u].units;
        const auto ctc = ctc_loss_and_grad(model.forward(tokens), targets[u]);
        epoch_loss += ctc.loss;
        ++epoch_count;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
          const auto tok = static_cast<std::size_t>(tokens[i]);
          const auto e = model.embedding.row(tok);
          auto ge = grad_e.row(tok);
          for (std::size_t j = 0; j < R; ++j) {
            const auto g = ctc.grad.row(i * R + j);
            for (std::size_t v = 0; v < V; ++v) grad_b[v] += g[v];
            for (std::size_t d = 0; d < E; ++d) {
              const auto w = model.projection.row(d).subspan(j * V, V);
              auto gw = grad_w.row(d).subspan(j * V, V);
              double acc = 0.0;
              for (std::size_t v = 0; v < V; ++v) {
                gw[v] += e[d] * g[v];
                acc += w[v] * g[v];
              }
              ge[d] += acc;
            }
          }
        }
      }
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (auto& g : grad_e.values()) g *= scale;
      for (auto& g : grad_w.values()) g *= scale;
      for (auto& g : grad_b) g *= scale;
      adam_e.step(model.embedding.values(), grad_e.values());
      adam_w.step(model.projection.values(), grad_w.values());
      adam_b.step(model.bias, grad_b);
      detail::require_finite(model.embedding.values(), "embedding");
      detail::require_finite(model.projection.values(), "projection");
      detail::require_finite(model.bias, "bias");
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(epoch_count));
  }
  return result;
}

TextTable transcribe_discrete(const DiscreteProbeModel& model, std::span<const UnitSequence> corpus) {
  TextTable hyps;
  for (const auto& seq : corpus) {
    check_tokens(seq.units, model.token_vocab_size(), seq.utt_id);
    std::string text;
    if (!seq.units.empty()) text = utf8_encode(model.vocab.decode(greedy_decode(model.forward(seq.units))));
    hyps.emplace(seq.utt_id, std::move(text));
  }
  return hyps;
}

DiscreteEval evaluate_discrete(const DiscreteProbeModel& model, std::span<const UnitSequence> corpus,
                               const TextTable& transcripts) {
  if (corpus.empty()) throw ArgumentError("evaluation needs at least one utterance");
  DiscreteEval eval;
  std::vector<EvalPair> pairs;
  const auto hyps = transcribe_discrete(model, corpus);
  for (const auto& seq : corpus) {
    const auto it = transcripts.find(seq.utt_id);
    if (it == transcripts.end()) throw ArgumentError("no reference transcript for " + seq.utt_id);
    const auto target = model.vocab.encode_utf8(it->second);
    if (seq.units.empty() || ctc_min_frames(target) > seq.units.size() * model.upsample) ++eval.skipped;
    pairs.push_back({seq.utt_id, it->second, hyps.at(seq.utt_id)});
  }
  eval.cer = detail::cer_percent(std::move(pairs));
  return eval;
}

double gap_report(double continuous_cer, double discrete_cer) {
  if (!(continuous_cer > 0.0)) throw ArgumentError("relative gap undefined for continuous CER <= 0");
  return 100.0 * (discrete_cer - continuous_cer) / continuous_cer;
}

}  // namespace dsu
