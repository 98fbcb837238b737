// Independent reference implementations used only by tests.
#ifndef DSU_TESTS_ORACLES_HPP
#define DSU_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dsu/common.hpp"

namespace dsu::oracle {

// -log of the summed probability of every length-T path that collapses to
// target, by enumerating all V^T paths in probability space.
inline double brute_force_ctc(const Matrix& logits, const std::vector<int>& target) {
  const std::size_t T = logits.rows();
  const std::size_t V = logits.cols();
  std::vector<std::vector<double>> probs(T, std::vector<double>(V));
  for (std::size_t t = 0; t < T; ++t) {
    double z = 0.0;
    for (std::size_t k = 0; k < V; ++k) z += std::exp(logits(t, k));
    for (std::size_t k = 0; k < V; ++k) probs[t][k] = std::exp(logits(t, k)) / z;
  }
  std::vector<std::size_t> path(T, 0);
  double total = 0.0;
  while (true) {
    std::vector<int> collapsed;
    int prev = -1;
    double p = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      const int k = static_cast<int>(path[t]);
      p *= probs[t][path[t]];
      if (k != prev && k != 0) collapsed.push_back(k);
      prev = k;
    }
    if (collapsed == target) total += p;
    std::size_t t = 0;
    while (t < T && ++path[t] == V) path[t++] = 0;
    if (t == T) break;
  }
  return total > 0.0 ? -std::log(total) : std::numeric_limits<double>::infinity();
}

// Central differences of f over x with step h.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// max_i |a_i - b_i| / max(1, max_i |b_i|): relative to the gradient scale.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0;
  double scale = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

// Optimal 2-means of 1-D points by enumerating every 2-partition.
struct TwoMeans {
  double low = 0.0;
  double high = 0.0;
  double cost = std::numeric_limits<double>::infinity();
};

inline TwoMeans brute_force_two_means(const std::vector<double>& xs) {
  TwoMeans best;
  const std::size_t n = xs.size();
  for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
    double s[2] = {0, 0};
    double c[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      const int g = (mask >> i) & 1;
      s[g] += xs[i];
      c[g] += 1;
    }
    const double m[2] = {s[0] / c[0], s[1] / c[1]};
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int g = (mask >> i) & 1;
      cost += (xs[i] - m[g]) * (xs[i] - m[g]);
    }
    if (cost < best.cost) best = {std::min(m[0], m[1]), std::max(m[0], m[1]), cost};
  }
  return best;
}

// Plain recursion; exponential, for short strings only.
template <typename S>
std::size_t recursive_edit_distance(const S& a, const S& b, std::size_t i = 0, std::size_t j = 0) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  if (a[i] == b[j]) return recursive_edit_distance(a, b, i + 1, j + 1);
  return 1 + std::min({recursive_edit_distance(a, b, i + 1, j), recursive_edit_distance(a, b, i, j + 1),
                       recursive_edit_distance(a, b, i + 1, j + 1)});
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = n(rng);
  return m;
}

}  // namespace dsu::oracle

#endif  // DSU_TESTS_ORACLES_HPP
