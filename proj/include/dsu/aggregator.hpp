#ifndef DSU_AGGREGATOR_HPP
#define DSU_AGGREGATOR_HPP

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "dsu/common.hpp"
#include "dsu/feature_store.hpp"

namespace dsu {

// pretrained: L block outputs plus the layer-normalized last block (L+1
// weights). finetuned: the L block outputs only.
enum class AggregationMode { pretrained, finetuned };

std::string_view to_string(AggregationMode mode);
AggregationMode parse_mode(std::string_view s);

inline constexpr double kDefaultLayerNormEps = 1e-5;

struct LayerWeights {
  AggregationMode mode = AggregationMode::finetuned;
  std::vector<double> lambdas;
  // Empty gamma/beta mean the identity affine (gamma = 1, beta = 0).
  std::vector<double> ln_gamma;
  std::vector<double> ln_beta;
  double ln_eps = kDefaultLayerNormEps;

  static LayerWeights uniform(AggregationMode mode, std::size_t num_layers);

  // Number of archive layers these weights aggregate.
  std::size_t num_layers() const;

  // Throws ArgumentError if incompatible with an L-layer, D-dim archive.
  void check_compatible(std::size_t num_layers, std::size_t dim) const;

  bool operator==(const LayerWeights&) const = default;
};

// Text format: "mode=<m>", "eps=<float>", space-separated lambdas, then
// optional "gamma ..." / "beta ..." lines.
void write_weights(const LayerWeights& w, std::ostream& out);
LayerWeights read_weights(std::istream& in);
void save_weights(const LayerWeights& w, const std::filesystem::path& path);
LayerWeights load_weights(const std::filesystem::path& path);

std::vector<double> softmax_weights(std::span<const double> lambdas);

// (h - mean) / sqrt(var + eps) * gamma + beta with population variance.
std::vector<double> layer_norm(std::span<const double> h, std::span<const double> gamma,
                               std::span<const double> beta, double eps);
std::vector<double> layer_norm(std::span<const float> h, std::span<const double> gamma,
                               std::span<const double> beta, double eps);

// Returns the T x D aggregate of the stack under the given weights.
Matrix weighted_sum(const LayerStack& layers, const LayerWeights& weights);

// d(loss)/d(lambda) given d(loss)/d(aggregate) (T x D). gamma, beta and eps
// are treated as constants.
std::vector<double> weighted_sum_grad(const LayerStack& layers, const LayerWeights& weights,
                                      const Matrix& upstream);

}  // namespace dsu

#endif  // DSU_AGGREGATOR_HPP
