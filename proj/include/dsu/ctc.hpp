#ifndef DSU_CTC_HPP
#define DSU_CTC_HPP

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsu/common.hpp"
#include "dsu/text.hpp"

namespace dsu {

using Label = std::int32_t;

inline constexpr Label kBlank = 0;

// Output alphabet of a CTC head. Index 0 is the blank; symbol k lives at
// index k + 1.
class LabelVocab {
 public:
  LabelVocab() = default;
  explicit LabelVocab(std::u32string symbols);

  // Sorted set of every code point appearing in the transcripts.
  static LabelVocab from_transcripts(const TextTable& transcripts);

  std::size_t size() const { return symbols_.size() + 1; }
  const std::u32string& symbols() const { return symbols_; }

  // Throws ArgumentError on a character outside the vocabulary.
  std::vector<Label> encode(std::u32string_view text) const;
  std::vector<Label> encode_utf8(std::string_view text) const;
  std::u32string decode(std::span<const Label> labels) const;
  bool contains(char32_t c) const;

  bool operator==(const LabelVocab&) const = default;

 private:
  std::u32string symbols_;
};

// Minimum frames needed to emit target: one per label plus one blank between
// each pair of equal neighbours.
std::size_t ctc_min_frames(std::span<const Label> target);

// -log P(target | softmax(logits)) over all blank-augmented alignments.
// Throws InfeasibleError when logits has fewer rows than ctc_min_frames.
double ctc_loss(const Matrix& logits, std::span<const Label> target);

struct CtcResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d logits, T x V
};

CtcResult ctc_loss_and_grad(const Matrix& logits, std::span<const Label> target);
Matrix ctc_grad(const Matrix& logits, std::span<const Label> target);

// Per-frame argmax (ties to the lowest index), collapse repeats, drop blanks.
std::vector<Label> greedy_decode(const Matrix& logits);

}  // namespace dsu

#endif  // DSU_CTC_HPP
