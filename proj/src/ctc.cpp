#include "dsu/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace dsu {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    const auto row = logits.row(t);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - peak);
    const double lse = peak + std::log(total);
    auto dst = out.row(t);
    for (std::size_t k = 0; k < row.size(); ++k) dst[k] = row[k] - lse;
  }
  return out;
}

void check_inputs(const Matrix& logits, std::span<const Label> target) {
  if (logits.rows() == 0 || logits.cols() < 2) {
    throw ArgumentError("ctc needs at least one frame and a vocab of size >= 2");
  }
  for (double v : logits.values()) {
    if (!std::isfinite(v)) throw ArgumentError("ctc logits must be finite");
  }
  for (Label l : target) {
    if (l < 1 || static_cast<std::size_t>(l) >= logits.cols()) {
      throw ArgumentError("ctc target label " + std::to_string(l) + " outside [1, V-1]");
    }
  }
  const std::size_t need = ctc_min_frames(target);
  if (logits.rows() < need) {
    throw InfeasibleError("ctc target of length " + std::to_string(target.size()) + " needs " +
                          std::to_string(need) + " frames, got " + std::to_string(logits.rows()));
  }
}

// Blank-interleaved target: blank, l1, blank, l2, ..., blank.
std::vector<Label> extend(std::span<const Label> target) {
  std::vector<Label> ext(2 * target.size() + 1, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

bool can_skip(const std::vector<Label>& ext, std::size_t s) {
  return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

// alpha(t, s): log prob of prefixes ending in state s at frame t, emissions
// through t inclusive.
Matrix forward(const Matrix& logp, const std::vector<Label>& ext) {
  const std::size_t T = logp.rows();
  const std::size_t S = ext.size();
  Matrix alpha(T, S, kNegInf);
  alpha(0, 0) = logp(0, ext[0]);
  if (S > 1) alpha(0, 1) = logp(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(ext, s)) a = log_add(a, alpha(t - 1, s - 2));
      if (a != kNegInf) alpha(t, s) = a + logp(t, ext[s]);
    }
  }
  return alpha;
}

// beta(t, s): log prob of completing from state s at frame t, emissions
// after t only.
Matrix backward(const Matrix& logp, const std::vector<Label>& ext) {
  const std::size_t T = logp.rows();
  const std::size_t S = ext.size();
  Matrix beta(T, S, kNegInf);
  beta(T - 1, S - 1) = 0.0;
  if (S > 1) beta(T - 1, S - 2) = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta(t + 1, s) + logp(t + 1, ext[s]);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1) + logp(t + 1, ext[s + 1]));
      if (s + 2 < S && can_skip(ext, s + 2)) b = log_add(b, beta(t + 1, s + 2) + logp(t + 1, ext[s + 2]));
      beta(t, s) = b;
    }
  }
  return beta;
}

double total_log_prob(const Matrix& alpha) {
  const std::size_t T = alpha.rows();
  const std::size_t S = alpha.cols();
  double lp = alpha(T - 1, S - 1);
  if (S > 1) lp = log_add(lp, alpha(T - 1, S - 2));
  return lp;
}

}  // namespace

LabelVocab::LabelVocab(std::u32string symbols) : symbols_(std::move(symbols)) {
  std::u32string sorted = symbols_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ArgumentError("vocab symbols must be unique");
  }
}

LabelVocab LabelVocab::from_transcripts(const TextTable& transcripts) {
  std::set<char32_t> seen;
  for (const auto& [id, text] : transcripts) {
    for (char32_t c : utf8_decode(text)) seen.insert(c);
  }
  return LabelVocab(std::u32string(seen.begin(), seen.end()));
}

bool LabelVocab::contains(char32_t c) const { return symbols_.find(c) != std::u32string::npos; }

std::vector<Label> LabelVocab::encode(std::u32string_view text) const {
  std::vector<Label> out;
  out.reserve(text.size());
  for (char32_t c : text) {
    const auto pos = symbols_.find(c);
    if (pos == std::u32string::npos) {
      throw ArgumentError("character U+" + std::to_string(static_cast<std::uint32_t>(c)) +
                          " not in vocabulary");
    }
    out.push_back(static_cast<Label>(pos + 1));
  }
  return out;
}

std::vector<Label> LabelVocab::encode_utf8(std::string_view text) const {
  return encode(utf8_decode(text));
}

std::u32string LabelVocab::decode(std::span<const Label> labels) const {
  std::u32string out;
  out.reserve(labels.size());
  for (Label l : labels) {
    if (l < 1 || static_cast<std::size_t>(l) > symbols_.size()) {
      throw ArgumentError("label " + std::to_string(l) + " outside vocabulary");
    }
    out.push_back(symbols_[static_cast<std::size_t>(l - 1)]);
  }
  return out;
}

std::size_t ctc_min_frames(std::span<const Label> target) {
  std::size_t need = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++need;
  }
  return need;
}

double ctc_loss(const Matrix& logits, std::span<const Label> target) {
  check_inputs(logits, target);
  const auto logp = log_softmax_rows(logits);
  const auto ext = extend(target);
  return -total_log_prob(forward(logp, ext));
}

CtcResult ctc_loss_and_grad(const Matrix& logits, std::span<const Label> target) {
  check_inputs(logits, target);
  const auto logp = log_softmax_rows(logits);
  const auto ext = extend(target);
  const auto alpha = forward(logp, ext);
  const auto beta = backward(logp, ext);
  const double log_p = total_log_prob(alpha);

  const std::size_t T = logits.rows();
  const std::size_t V = logits.cols();
  CtcResult result;
  result.loss = -log_p;
  result.grad = Matrix(T, V);
  std::vector<double> occupancy(V);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kNegInf);
    for (std::size_t s = 0; s < ext.size(); ++s) {
      const auto k = static_cast<std::size_t>(ext[s]);
      occupancy[k] = log_add(occupancy[k], alpha(t, s) + beta(t, s));
    }
    auto g = result.grad.row(t);
    for (std::size_t k = 0; k < V; ++k) {
      const double posterior = occupancy[k] == kNegInf ? 0.0 : std::exp(occupancy[k] - log_p);
      g[k] = std::exp(logp(t, k)) - posterior;
    }
  }
  return result;
}

Matrix ctc_grad(const Matrix& logits, std::span<const Label> target) {
  return ctc_loss_and_grad(logits, target).grad;
}

std::vector<Label> greedy_decode(const Matrix& logits) {
  std::vector<Label> out;
  Label prev = -1;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    const auto row = logits.row(t);
    const auto best = static_cast<Label>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace dsu
