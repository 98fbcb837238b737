#include "dsu/metrics.hpp"

#include "dsu/common.hpp"
#include "dsu/text.hpp"

namespace dsu {

std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  return levenshtein<char32_t>(std::span(a.data(), a.size()), std::span(b.data(), b.size()));
}

EditCounts edit_breakdown(std::u32string_view ref, std::u32string_view hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::size_t> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1,
                           at(i, j - 1) + 1});
    }
  }
  EditCounts counts;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++counts.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++counts.deletions;
      --i;
    } else {
      ++counts.insertions;
      --j;
    }
  }
  return counts;
}

double CerStats::percent() const {
  if (reference_length == 0) throw ArgumentError("CER undefined: total reference length is zero");
  return 100.0 * static_cast<double>(edits) / static_cast<double>(reference_length);
}

CerStats corpus_cer_stats(std::span<const EvalPair> pairs) {
  CerStats stats;
  for (const auto& p : pairs) {
    const auto ref = utf8_decode(p.reference);
    const auto hyp = utf8_decode(p.hypothesis);
    const auto b = edit_breakdown(ref, hyp);
    stats.edits += b.total();
    stats.reference_length += ref.size();
    stats.breakdown.substitutions += b.substitutions;
    stats.breakdown.insertions += b.insertions;
    stats.breakdown.deletions += b.deletions;
  }
  return stats;
}

double corpus_cer(std::span<const EvalPair> pairs) { return corpus_cer_stats(pairs).percent(); }

}  // namespace dsu
