#ifndef DSU_DISCRETE_PROBE_HPP
#define DSU_DISCRETE_PROBE_HPP

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "dsu/common.hpp"
#include "dsu/ctc.hpp"
#include "dsu/probe.hpp"
#include "dsu/text.hpp"
#include "dsu/tokenproc.hpp"

namespace dsu {

inline constexpr std::size_t kDefaultEmbedDim = 64;

// Embedding table feeding a linear CTC head. Each token emits `upsample`
// output frames; frame j of a token uses projection columns
// [j*V, (j+1)*V). With upsample = 1 this is embedding + the plain probe.
struct DiscreteProbeModel {
  Matrix embedding;   // vocab_size x E
  Matrix projection;  // E x (upsample * V)
  std::vector<double> bias;  // V, shared across sub-frames
  LabelVocab vocab;
  std::size_t upsample = 1;

  std::size_t token_vocab_size() const { return embedding.rows(); }
  std::size_t embed_dim() const { return embedding.cols(); }
  std::size_t output_dim() const { return bias.size(); }

  // (tokens * upsample) x V logits.
  Matrix forward(std::span<const Token> tokens) const;

  bool operator==(const DiscreteProbeModel&) const = default;
};

struct DiscreteOptions {
  std::size_t embed_dim = kDefaultEmbedDim;
  // Output frames per token; must cover the longest unit span a token
  // stands for (BpeModel::max_span) for CTC to stay feasible.
  std::size_t upsample = 1;
};

// Probe text format, W rows of width upsample*V, followed by an
// "embedding N E R" line and N embedding rows.
void write_discrete_probe(const DiscreteProbeModel& model, std::ostream& out);
DiscreteProbeModel read_discrete_probe(std::istream& in);
void save_discrete_probe(const DiscreteProbeModel& model, const std::filesystem::path& path);
DiscreteProbeModel load_discrete_probe(const std::filesystem::path& path);

struct DiscreteTrainResult {
  DiscreteProbeModel model;
  std::vector<double> loss_history;
  std::size_t skipped = 0;
};

// Embedding rows start at normal(0, 1/sqrt(E)). Utterances too short for
// their transcript under CTC are skipped and counted.
DiscreteTrainResult train_discrete(std::span<const UnitSequence> corpus, const TextTable& transcripts,
                                   std::size_t vocab_size, const TrainConfig& config,
                                   const DiscreteOptions& options = {});

TextTable transcribe_discrete(const DiscreteProbeModel& model, std::span<const UnitSequence> corpus);

struct DiscreteEval {
  double cer = 0.0;           // over every utterance, including infeasible ones
  std::size_t skipped = 0;    // utterances with CTC-infeasible length
};

DiscreteEval evaluate_discrete(const DiscreteProbeModel& model, std::span<const UnitSequence> corpus,
                               const TextTable& transcripts);

// 100 * (discrete - continuous) / continuous.
double gap_report(double continuous_cer, double discrete_cer);

}  // namespace dsu

#endif  // DSU_DISCRETE_PROBE_HPP
