#ifndef DSU_PIPELINE_HPP
#define DSU_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dsu/aggregator.hpp"
#include "dsu/feature_store.hpp"
#include "dsu/probe.hpp"
#include "dsu/quantizer.hpp"
#include "dsu/tokenproc.hpp"

namespace dsu {

class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& cause)
      : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineConfig {
  std::filesystem::path out_dir;
  // Input corpus. When archive is empty a synthetic corpus is generated.
  std::filesystem::path archive;
  std::filesystem::path transcripts;
  std::filesystem::path durations;
  std::filesystem::path train_list;
  std::filesystem::path test_list;

  SynthSpec synth;
  double frame_shift_seconds = 0.02;

  AggregationMode mode = AggregationMode::finetuned;
  std::uint64_t seed = 0;
  TrainConfig stage1;
  KmeansConfig kmeans;
  bool dedup = true;
  std::size_t bpe_merges = kDefaultBpeMerges;
  TrainConfig stage2;
  std::size_t embed_dim = 64;

  // Applies one "key=value" setting; unknown keys are an ArgumentError.
  void set(std::string_view key, std::string_view value);
  // Flat key=value lines; '#' starts a comment.
  void load(std::istream& in);
  void load(const std::filesystem::path& path);

  // Copies the seed into every seeded component.
  void propagate_seed();
};

struct VariantReport {
  std::string name;
  std::size_t tokens = 0;
  std::size_t vocab_size = 0;
  double bitrate = 0.0;
  double cer = 0.0;
  std::optional<double> gap_percent;
  std::size_t skipped = 0;
  std::size_t upsample = 1;
};

struct RunReport {
  AggregationMode mode = AggregationMode::finetuned;
  std::size_t train_utts = 0;
  std::size_t test_utts = 0;
  std::size_t total_frames = 0;
  double total_seconds = 0.0;
  std::vector<double> layer_weights;  // softmax of the learned lambdas
  std::size_t weight_argmax = 0;      // 1-based; L+1 is the final-norm term
  std::vector<double> stage1_loss;
  std::size_t stage1_skipped = 0;
  std::string weights_hash_stage1;
  std::string weights_hash_after_stage2;
  double continuous_cer = 0.0;
  std::vector<double> kmeans_distortion;
  std::vector<VariantReport> variants;
  std::vector<std::pair<std::string, double>> stage_seconds;

  const VariantReport& variant(std::string_view name) const;

  // Deterministic key=value lines (no timings).
  std::vector<std::pair<std::string, std::string>> key_values() const;
  void write_key_values(std::ostream& out) const;
  void write_summary(std::ostream& out) const;
};

RunReport run_pipeline(const PipelineConfig& config);

// "layer_index,weight" rows of the softmax weights; the pretrained extra
// term is labelled final_norm.
void export_weight_csv(const LayerWeights& weights, std::ostream& out);
void export_weight_csv(const LayerWeights& weights, const std::filesystem::path& path);

// Default split: utterances whose FNV-1a id hash has low byte % 5 == 0 go to
// test.
bool is_test_utterance(std::string_view utt_id);

}  // namespace dsu

#endif  // DSU_PIPELINE_HPP
