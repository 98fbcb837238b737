#ifndef DSU_METRICS_HPP
#define DSU_METRICS_HPP

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dsu {

// Unit-cost edit distance, two-row DP.
template <typename T>
std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::size_t levenshtein(std::u32string_view a, std::u32string_view b);

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;

  std::size_t total() const { return substitutions + insertions + deletions; }
};

// One minimum-cost alignment of reference to hypothesis, broken down by type.
EditCounts edit_breakdown(std::u32string_view reference, std::u32string_view hypothesis);

// reference / hypothesis are UTF-8; comparison is per code point.
struct EvalPair {
  std::string utt_id;
  std::string reference;
  std::string hypothesis;
};

struct CerStats {
  std::size_t edits = 0;
  std::size_t reference_length = 0;
  EditCounts breakdown;

  double percent() const;
};

CerStats corpus_cer_stats(std::span<const EvalPair> pairs);

// 100 * pooled edits / pooled reference length.
double corpus_cer(std::span<const EvalPair> pairs);

}  // namespace dsu

#endif  // DSU_METRICS_HPP
