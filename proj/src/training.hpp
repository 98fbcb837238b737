#ifndef DSU_SRC_TRAINING_HPP
#define DSU_SRC_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dsu/common.hpp"
#include "dsu/metrics.hpp"
#include "dsu/probe.hpp"

namespace dsu::detail {

class Adam {
 public:
  Adam(std::size_t size, double lr, const TrainConfig& config)
      : m_(size, 0.0), v_(size, 0.0), lr_(lr), beta1_(config.adam_beta1), beta2_(config.adam_beta2),
        eps_(config.adam_eps) {}

  void step(std::span<double> params, std::span<const double> grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
};

// Items sorted by (length, id) and cut into consecutive chunks.
inline std::vector<std::vector<std::size_t>> length_batches(const std::vector<std::size_t>& lengths,
                                                            const std::vector<std::string>& ids,
                                                            std::size_t batch_size) {
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return lengths[a] != lengths[b] ? lengths[a] < lengths[b] : ids[a] < ids[b];
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  return batches;
}

inline void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw TrainingError(std::string("non-finite ") + what + " after update");
  }
}

inline double cer_percent(std::vector<EvalPair> pairs) {
  if (pairs.empty()) throw ArgumentError("evaluation needs at least one utterance");
  return corpus_cer(pairs);
}

}  // namespace dsu::detail

#endif  // DSU_SRC_TRAINING_HPP
