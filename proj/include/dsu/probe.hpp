#ifndef DSU_PROBE_HPP
#define DSU_PROBE_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dsu/aggregator.hpp"
#include "dsu/common.hpp"
#include "dsu/ctc.hpp"
#include "dsu/feature_store.hpp"
#include "dsu/text.hpp"

namespace dsu {

struct TrainConfig {
  double learning_rate = 1e-3;         // projection, bias, embedding
  double lambda_learning_rate = 1e-2;  // layer weights
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// Linear projection + CTC head over D_in-dimensional frames.
struct ProbeModel {
  Matrix projection;  // D_in x V
  std::vector<double> bias;
  LabelVocab vocab;

  std::size_t input_dim() const { return projection.rows(); }
  std::size_t output_dim() const { return projection.cols(); }

  // T x V logits.
  Matrix forward(const Matrix& features) const;

  bool operator==(const ProbeModel&) const = default;
};

// Header "dsu-probe v1 D V", D rows of W, the bias row, then the vocab as
// decimal code points.
void write_probe(const ProbeModel& model, std::ostream& out);
ProbeModel read_probe(std::istream& in);
void save_probe(const ProbeModel& model, const std::filesystem::path& path);
ProbeModel load_probe(const std::filesystem::path& path);

struct Stage1Result {
  LayerWeights weights;
  ProbeModel model;
  std::vector<double> loss_history;  // mean CTC loss per epoch
  std::size_t skipped = 0;           // utterances with infeasible targets
};

// Jointly trains the layer weights and the probe head on continuous
// aggregated features. Every archive utterance needs a transcript.
Stage1Result train_stage1(const FeatureArchive& archive, const TextTable& transcripts, AggregationMode mode,
                          const TrainConfig& config);

// Greedy transcripts for every utterance in the archive.
TextTable transcribe_continuous(const LayerWeights& weights, const ProbeModel& model, const FeatureArchive& archive);

// Corpus CER (percent) of the probe over the archive.
double evaluate_continuous(const LayerWeights& weights, const ProbeModel& model, const FeatureArchive& archive,
                           const TextTable& transcripts);

}  // namespace dsu

#endif  // DSU_PROBE_HPP
