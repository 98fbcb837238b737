#include "dsu/probe.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <string>

#include "training.hpp"

namespace dsu {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !(lambda_learning_rate > 0.0)) throw ArgumentError("learning rates must be > 0");
  if (batch_size == 0) throw ArgumentError("batch_size must be >= 1");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw ArgumentError("adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ArgumentError("adam_eps must be > 0");
}

Matrix ProbeModel::forward(const Matrix& features) const {
  if (features.cols() != input_dim()) throw ArgumentError("feature dim does not match probe input dim");
  const std::size_t V = output_dim();
  Matrix logits(features.rows(), V);
  for (std::size_t t = 0; t < features.rows(); ++t) {
    auto out = logits.row(t);
    std::copy(bias.begin(), bias.end(), out.begin());
    const auto x = features.row(t);
    for (std::size_t d = 0; d < x.size(); ++d) {
      const auto w = projection.row(d);
      for (std::size_t v = 0; v < V; ++v) out[v] += x[d] * w[v];
    }
  }
  return logits;
}

void write_probe(const ProbeModel& model, std::ostream& out) {
  out << "dsu-probe v1 " << model.input_dim() << ' ' << model.output_dim() << '\n';
  for (std::size_t d = 0; d < model.projection.rows(); ++d) {
    const auto row = model.projection.row(d);
    for (std::size_t v = 0; v < row.size(); ++v) out << (v ? " " : "") << format_double(row[v]);
    out << '\n';
  }
  for (std::size_t v = 0; v < model.bias.size(); ++v) out << (v ? " " : "") << format_double(model.bias[v]);
  out << '\n';
  const auto& sym = model.vocab.symbols();
  for (std::size_t i = 0; i < sym.size(); ++i) out << (i ? " " : "") << static_cast<std::uint32_t>(sym[i]);
  out << '\n';
}

namespace {

std::vector<double> parse_row(const std::string& line, std::size_t expected, const char* what) {
  std::vector<double> row;
  for (auto tok : split_ws(line)) row.push_back(parse_double(tok));
  if (row.size() != expected) throw FormatError(std::string("probe model: wrong width in ") + what);
  for (double v : row) {
    if (!std::isfinite(v)) throw ValidationError("probe model: non-finite parameter");
  }
  return row;
}

}  // namespace

ProbeModel read_probe(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("probe model: empty file");
  const auto head = split_ws(line);
  if (head.size() != 4 || head[0] != "dsu-probe") throw FormatError("probe model: bad header");
  if (head[1] != "v1") throw UnsupportedVersionError("probe model: unsupported version");
  const auto D = static_cast<std::size_t>(parse_int(head[2]));
  const auto V = static_cast<std::size_t>(parse_int(head[3]));
  ProbeModel model;
  model.projection = Matrix(D, V);
  for (std::size_t d = 0; d < D; ++d) {
    if (!std::getline(in, line)) throw CorruptionError("probe model: truncated projection");
    const auto row = parse_row(line, V, "projection");
    std::copy(row.begin(), row.end(), model.projection.row(d).begin());
  }
  if (!std::getline(in, line)) throw CorruptionError("probe model: missing bias");
  model.bias = parse_row(line, V, "bias");
  if (!std::getline(in, line)) throw CorruptionError("probe model: missing vocab");
  std::u32string symbols;
  for (auto tok : split_ws(line)) symbols.push_back(static_cast<char32_t>(parse_int(tok)));
  model.vocab = LabelVocab(std::move(symbols));
  if (model.vocab.size() != V) throw ValidationError("probe model: vocab size does not match V");
  return model;
}

void save_probe(const ProbeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_probe(model, out);
}

ProbeModel load_probe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_probe(in);
}

Stage1Result train_stage1(const FeatureArchive& archive, const TextTable& transcripts, AggregationMode mode,
                          const TrainConfig& config) {
  config.validate();
  if (archive.utterances.empty()) throw ArgumentError("train_stage1 needs a non-empty archive");
  archive.validate();

  TextTable used;
  for (const auto& utt : archive.utterances) {
    const auto it = transcripts.find(utt.id);
    if (it == transcripts.end()) throw ArgumentError("no transcript for " + utt.id);
    used.emplace(utt.id, it->second);
  }

  Stage1Result result;
  result.model.vocab = LabelVocab::from_transcripts(used);
  result.weights = LayerWeights::uniform(mode, archive.num_layers);
  const std::size_t D = archive.feature_dim;
  const std::size_t V = result.model.vocab.size();

  std::mt19937_64 rng(config.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(D));
  std::uniform_real_distribution<double> init(-bound, bound);
  result.model.projection = Matrix(D, V);
  for (auto& w : result.model.projection.values()) w = init(rng);
  result.model.bias.assign(V, 0.0);

  std::vector<std::size_t> kept;
  std::vector<std::vector<Label>> targets(archive.utterances.size());
  for (std::size_t u = 0; u < archive.utterances.size(); ++u) {
    const auto& utt = archive.utterances[u];
    targets[u] = result.model.vocab.encode_utf8(used.at(utt.id));
    if (ctc_min_frames(targets[u]) > utt.num_frames) {
      ++result.skipped;
    } else {
      kept.push_back(u);
    }
  }
  if (kept.empty()) throw TrainingError("every utterance has an infeasible CTC target");

  std::vector<std::size_t> lengths;
  std::vector<std::string> ids;
  for (auto u : kept) {
    lengths.push_back(archive.utterances[u].num_frames);
    ids.push_back(archive.utterances[u].id);
  }
  auto batches = detail::length_batches(lengths, ids, config.batch_size);

  auto& W = result.model.projection;
  auto& b = result.model.bias;
  auto& lambdas = result.weights.lambdas;
  detail::Adam adam_w(W.values().size(), config.learning_rate, config);
  detail::Adam adam_b(b.size(), config.learning_rate, config);
  detail::Adam adam_l(lambdas.size(), config.lambda_learning_rate, config);

  Matrix grad_w(D, V);
  std::vector<double> grad_b(V);
  std::vector<double> grad_l(lambdas.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(batches.begin(), batches.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    for (const auto& batch : batches) {
      grad_w.fill(0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      std::fill(grad_l.begin(), grad_l.end(), 0.0);
      for (auto slot : batch) {
        const std::size_t u = kept[slot];
        const auto stack = archive.stack(u);
        const Matrix h = weighted_sum(stack, result.weights);
        const Matrix logits = result.model.forward(h);
        const auto ctc = ctc_loss_and_grad(logits, targets[u]);
        epoch_loss += ctc.loss;
        ++epoch_count;

        const std::size_t T = h.rows();
        Matrix upstream(T, D);
        for (std::size_t t = 0; t < T; ++t) {
          const auto g = ctc.grad.row(t);
          const auto x = h.row(t);
          for (std::size_t v = 0; v < V; ++v) grad_b[v] += g[v];
          auto dh = upstream.row(t);
          for (std::size_t d = 0; d < D; ++d) {
            auto gw = grad_w.row(d);
            const auto w = W.row(d);
            double acc = 0.0;
            for (std::size_t v = 0; v < V; ++v) {
              gw[v] += x[d] * g[v];
              acc += w[v] * g[v];
            }
            dh[d] = acc;
          }
        }
        const auto gl = weighted_sum_grad(stack, result.weights, upstream);
        for (std::size_t i = 0; i < gl.size(); ++i) grad_l[i] += gl[i];
      }
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (auto& g : grad_w.values()) g *= scale;
      for (auto& g : grad_b) g *= scale;
      for (auto& g : grad_l) g *= scale;
      adam_w.step(W.values(), grad_w.values());
      adam_b.step(b, grad_b);
      adam_l.step(lambdas, grad_l);
      detail::require_finite(W.values(), "projection");
      detail::require_finite(b, "bias");
      detail::require_finite(lambdas, "layer weights");
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(epoch_count));
  }
  return result;
}

TextTable transcribe_continuous(const LayerWeights& weights, const ProbeModel& model, const FeatureArchive& archive) {
  weights.check_compatible(archive.num_layers, archive.feature_dim);
  if (model.input_dim() != archive.feature_dim) throw ArgumentError("probe input dim does not match archive");
  TextTable hyps;
  for (const auto& utt : archive.utterances) {
    const Matrix logits = model.forward(weighted_sum(archive.stack(utt), weights));
    hyps.emplace(utt.id, utf8_encode(model.vocab.decode(greedy_decode(logits))));
  }
  return hyps;
}

double evaluate_continuous(const LayerWeights& weights, const ProbeModel& model, const FeatureArchive& archive,
                           const TextTable& transcripts) {
  if (archive.utterances.empty()) throw ArgumentError("evaluation needs at least one utterance");
  std::vector<EvalPair> pairs;
  for (const auto& utt : archive.utterances) {
    const auto it = transcripts.find(utt.id);
    if (it == transcripts.end()) throw ArgumentError("no reference transcript for " + utt.id);
    for (char32_t c : utf8_decode(it->second)) {
      if (!model.vocab.contains(c)) throw ArgumentError("reference for " + utt.id + " uses a character outside the probe vocabulary");
    }
  }
  const auto hyps = transcribe_continuous(weights, model, archive);
  for (const auto& utt : archive.utterances) pairs.push_back({utt.id, transcripts.at(utt.id), hyps.at(utt.id)});
  return detail::cer_percent(std::move(pairs));
}

}  // namespace dsu
