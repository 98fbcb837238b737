#ifndef DSU_TOKENPROC_HPP
#define DSU_TOKENPROC_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dsu/quantizer.hpp"

namespace dsu {

using Token = std::int32_t;

struct UnitSequence {
  std::string utt_id;
  std::vector<Token> units;

  bool operator==(const UnitSequence&) const = default;
};

// "utt_id<TAB>u1 u2 ..." lines; order is preserved.
std::vector<UnitSequence> read_units(const std::filesystem::path& path);
void write_units(const std::filesystem::path& path, std::span<const UnitSequence> corpus);

std::vector<Token> dedup(std::span<const Token> units);
UnitSequence dedup(const UnitSequence& seq);

struct BpeMerge {
  Token left = 0;
  Token right = 0;
  Token token = 0;

  bool operator==(const BpeMerge&) const = default;
};

class BpeModel {
 public:
  BpeModel() = default;
  BpeModel(std::size_t base_vocab_size, std::vector<BpeMerge> merges);

  std::size_t base_vocab_size() const { return base_; }
  std::size_t vocab_size() const { return base_ + merges_.size(); }
  const std::vector<BpeMerge>& merges() const { return merges_; }

  // Number of base units a token expands to.
  std::size_t span_of(Token token) const;
  std::size_t max_span() const;

  bool operator==(const BpeModel&) const = default;

 private:
  std::size_t base_ = 0;
  std::vector<BpeMerge> merges_;
  std::vector<std::size_t> spans_;  // per merged token
};

inline constexpr std::size_t kDefaultBpeMerges = 1000;

// Greedy pair merging: the most frequent adjacent pair wins, ties go to the
// lexicographically smallest (left, right); stops once no pair occurs twice.
BpeModel bpe_train(std::span<const std::vector<Token>> corpus, std::size_t base_vocab_size,
                   std::size_t num_merges);

std::vector<Token> bpe_encode(std::span<const Token> units, const BpeModel& model);
std::vector<Token> bpe_decode(std::span<const Token> tokens, const BpeModel& model);

void write_bpe(const BpeModel& model, std::ostream& out);
BpeModel read_bpe(std::istream& in);
void save_bpe(const BpeModel& model, const std::filesystem::path& path);
BpeModel load_bpe(const std::filesystem::path& path);

// Fixed-width coding rate: tokens * log2(vocab_size) / seconds.
double bitrate(std::span<const std::vector<Token>> corpus, std::size_t vocab_size, double total_duration_seconds);

}  // namespace dsu

#endif  // DSU_TOKENPROC_HPP
