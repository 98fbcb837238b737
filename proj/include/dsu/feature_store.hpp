#ifndef DSU_FEATURE_STORE_HPP
#define DSU_FEATURE_STORE_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dsu/text.hpp"

namespace dsu {

// Read-only view of one utterance's L x T x D frames, layer-major.
struct LayerStack {
  std::span<const float> values;
  std::size_t num_layers = 0;
  std::size_t num_frames = 0;
  std::size_t dim = 0;

  // Layer i (0-based) as a T x D row-major block.
  std::span<const float> layer(std::size_t i) const {
    return values.subspan(i * num_frames * dim, num_frames * dim);
  }
  std::span<const float> frame(std::size_t i, std::size_t t) const {
    return values.subspan((i * num_frames + t) * dim, dim);
  }
};

struct Utterance {
  std::string id;
  std::uint32_t num_frames = 0;
  std::vector<float> frames;  // L * T * D, layer-major then frame-major

  bool operator==(const Utterance&) const = default;
};

// Multi-layer frame features for a set of utterances. All utterances share
// the layer count and feature dimension.
struct FeatureArchive {
  std::uint32_t num_layers = 0;
  std::uint32_t feature_dim = 0;
  std::vector<Utterance> utterances;

  LayerStack stack(std::size_t index) const;
  LayerStack stack(const Utterance& utt) const;

  // Throws ValidationError when any invariant is violated.
  void validate() const;

  bool operator==(const FeatureArchive&) const = default;
};

inline constexpr char kArchiveMagic[4] = {'D', 'S', 'U', 'A'};
inline constexpr std::uint32_t kArchiveVersion = 1;

std::uint64_t write_archive(const FeatureArchive& archive, std::ostream& out);
FeatureArchive read_archive(std::istream& in);

void save_archive(const FeatureArchive& archive, const std::filesystem::path& path);
FeatureArchive load_archive(const std::filesystem::path& path);

// Synthetic corpus with a single informative layer. Symbols are drawn with
// no two equal symbols adjacent, so run lengths are exactly
// frames_per_symbol.
struct SynthSpec {
  std::uint32_t num_classes = 8;
  std::uint32_t num_layers = 4;
  std::uint32_t feature_dim = 16;
  std::uint32_t planted_layer = 2;  // 1-based
  std::uint32_t frames_per_symbol = 3;
  double noise_sigma = 0.1;
  std::uint32_t num_utts = 200;
  std::uint32_t min_symbols = 4;
  std::uint32_t max_symbols = 12;
  double frame_shift_seconds = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

// Class means on the planted layer are at least this many noise_sigma apart.
inline constexpr double kClassSeparation = 8.0;

struct SynthCorpus {
  FeatureArchive archive;
  TextTable transcripts;
  TextTable durations;  // seconds, as decimal text
  std::vector<std::vector<double>> class_means;
};

SynthCorpus synth_generate(const SynthSpec& spec);

}  // namespace dsu

#endif  // DSU_FEATURE_STORE_HPP
