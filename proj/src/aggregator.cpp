#include "dsu/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "dsu/text.hpp"

namespace dsu {
namespace {

template <typename T>
std::vector<double> layer_norm_impl(std::span<const T> h, std::span<const double> gamma,
                                    std::span<const double> beta, double eps) {
  const std::size_t D = h.size();
  if (D == 0) throw ArgumentError("layer_norm needs D >= 1");
  if (!(eps > 0.0)) throw ArgumentError("layer_norm eps must be > 0");
  if (!gamma.empty() && gamma.size() != D) throw ArgumentError("layer_norm gamma size mismatch");
  if (!beta.empty() && beta.size() != D) throw ArgumentError("layer_norm beta size mismatch");
  double mean = 0.0;
  for (auto v : h) mean += static_cast<double>(v);
  mean /= static_cast<double>(D);
  double var = 0.0;
  for (auto v : h) var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  var /= static_cast<double>(D);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(D);
  for (std::size_t d = 0; d < D; ++d) {
    double y = (static_cast<double>(h[d]) - mean) * inv_std;
    if (!gamma.empty()) y *= gamma[d];
    if (!beta.empty()) y += beta[d];
    out[d] = y;
  }
  return out;
}

void check_shapes(const LayerStack& layers, const LayerWeights& weights) {
  if (layers.values.size() != layers.num_layers * layers.num_frames * layers.dim) {
    throw ArgumentError("layer stack size does not match its shape");
  }
  weights.check_compatible(layers.num_layers, layers.dim);
}

}  // namespace

std::string_view to_string(AggregationMode mode) {
  return mode == AggregationMode::pretrained ? "pretrained" : "finetuned";
}

AggregationMode parse_mode(std::string_view s) {
  if (s == "pretrained") return AggregationMode::pretrained;
  if (s == "finetuned") return AggregationMode::finetuned;
  throw ArgumentError("unknown aggregation mode '" + std::string(s) + "'");
}

LayerWeights LayerWeights::uniform(AggregationMode mode, std::size_t num_layers) {
  if (num_layers == 0) throw ArgumentError("need at least one layer");
  LayerWeights w;
  w.mode = mode;
  w.lambdas.assign(mode == AggregationMode::pretrained ? num_layers + 1 : num_layers, 0.0);
  return w;
}

std::size_t LayerWeights::num_layers() const {
  if (mode == AggregationMode::pretrained) return lambdas.empty() ? 0 : lambdas.size() - 1;
  return lambdas.size();
}

void LayerWeights::check_compatible(std::size_t L, std::size_t D) const {
  const std::size_t expected = mode == AggregationMode::pretrained ? L + 1 : L;
  if (L == 0 || lambdas.size() != expected) {
    throw ArgumentError("weights hold " + std::to_string(lambdas.size()) + " lambdas, " +
                        std::string(to_string(mode)) + " mode over " + std::to_string(L) +
                        " layers needs " + std::to_string(expected));
  }
  if ((!ln_gamma.empty() && ln_gamma.size() != D) || (!ln_beta.empty() && ln_beta.size() != D)) {
    throw ArgumentError("layer-norm parameters do not match feature dim");
  }
}

void write_weights(const LayerWeights& w, std::ostream& out) {
  out << "mode=" << to_string(w.mode) << '\n';
  out << "eps=" << format_double(w.ln_eps) << '\n';
  for (std::size_t i = 0; i < w.lambdas.size(); ++i) {
    if (i) out << ' ';
    out << format_double(w.lambdas[i]);
  }
  out << '\n';
  auto write_vec = [&](std::string_view tag, const std::vector<double>& v) {
    if (v.empty()) return;
    out << tag;
    for (double x : v) out << ' ' << format_double(x);
    out << '\n';
  };
  write_vec("gamma", w.ln_gamma);
  write_vec("beta", w.ln_beta);
}

LayerWeights read_weights(std::istream& in) {
  std::string line;
  LayerWeights w;
  if (!std::getline(in, line) || !line.starts_with("mode=")) throw FormatError("weights: expected mode= line");
  w.mode = parse_mode(line.substr(5));
  if (!std::getline(in, line) || !line.starts_with("eps=")) throw FormatError("weights: expected eps= line");
  w.ln_eps = parse_double(line.substr(4));
  if (!std::getline(in, line)) throw FormatError("weights: missing lambda line");
  for (auto tok : split_ws(line)) w.lambdas.push_back(parse_double(tok));
  if (w.lambdas.empty()) throw FormatError("weights: empty lambda line");
  while (std::getline(in, line)) {
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    std::vector<double>* target = nullptr;
    if (toks[0] == "gamma") target = &w.ln_gamma;
    else if (toks[0] == "beta") target = &w.ln_beta;
    else throw FormatError("weights: unexpected line '" + line + "'");
    for (std::size_t i = 1; i < toks.size(); ++i) target->push_back(parse_double(toks[i]));
  }
  for (double l : w.lambdas) {
    if (!std::isfinite(l)) throw ValidationError("weights: non-finite lambda");
  }
  return w;
}

void save_weights(const LayerWeights& w, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_weights(w, out);
}

LayerWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_weights(in);
}

std::vector<double> softmax_weights(std::span<const double> lambdas) {
  if (lambdas.empty()) throw ArgumentError("softmax_weights needs at least one value");
  const double peak = *std::max_element(lambdas.begin(), lambdas.end());
  if (!std::isfinite(peak)) throw ArgumentError("softmax_weights needs finite values");
  std::vector<double> w(lambdas.size());
  double total = 0.0;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!std::isfinite(lambdas[i])) throw ArgumentError("softmax_weights needs finite values");
    w[i] = std::exp(lambdas[i] - peak);
    total += w[i];
  }
  for (auto& x : w) x /= total;
  return w;
}

std::vector<double> layer_norm(std::span<const double> h, std::span<const double> gamma,
                               std::span<const double> beta, double eps) {
  return layer_norm_impl(h, gamma, beta, eps);
}

std::vector<double> layer_norm(std::span<const float> h, std::span<const double> gamma,
                               std::span<const double> beta, double eps) {
  return layer_norm_impl(h, gamma, beta, eps);
}

Matrix weighted_sum(const LayerStack& layers, const LayerWeights& weights) {
  check_shapes(layers, weights);
  const auto w = softmax_weights(weights.lambdas);
  const std::size_t L = layers.num_layers;
  const std::size_t T = layers.num_frames;
  const std::size_t D = layers.dim;
  Matrix out(T, D);
  for (std::size_t i = 0; i < L; ++i) {
    const auto block = layers.layer(i);
    auto& values = out.values();
    for (std::size_t k = 0; k < T * D; ++k) values[k] += w[i] * static_cast<double>(block[k]);
  }
  if (weights.mode == AggregationMode::pretrained) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto normed = layer_norm(layers.frame(L - 1, t), weights.ln_gamma, weights.ln_beta, weights.ln_eps);
      auto row = out.row(t);
      for (std::size_t d = 0; d < D; ++d) row[d] += w[L] * normed[d];
    }
  }
  return out;
}

std::vector<double> weighted_sum_grad(const LayerStack& layers, const LayerWeights& weights,
                                      const Matrix& upstream) {
  check_shapes(layers, weights);
  const std::size_t L = layers.num_layers;
  const std::size_t T = layers.num_frames;
  const std::size_t D = layers.dim;
  if (upstream.rows() != T || upstream.cols() != D) {
    throw ArgumentError("upstream gradient shape does not match T x D");
  }
  const auto w = softmax_weights(weights.lambdas);

  // s_i = sum_t <upstream_t, x_{i,t}> = d(loss)/d(w_i).
  std::vector<double> s(w.size(), 0.0);
  const auto& g = upstream.values();
  for (std::size_t i = 0; i < L; ++i) {
    const auto block = layers.layer(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < T * D; ++k) acc += g[k] * static_cast<double>(block[k]);
    s[i] = acc;
  }
  if (weights.mode == AggregationMode::pretrained) {
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const auto normed = layer_norm(layers.frame(L - 1, t), weights.ln_gamma, weights.ln_beta, weights.ln_eps);
      const auto row = upstream.row(t);
      for (std::size_t d = 0; d < D; ++d) acc += row[d] * normed[d];
    }
    s[L] = acc;
  }

  // Softmax Jacobian: d w_i / d lambda_j = w_i (delta_ij - w_j). Written as
  // w_j * sum_i w_i (s_j - s_i) so equal s_i give an exact zero.
  std::vector<double> grad(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * (s[j] - s[i]);
    grad[j] = w[j] * acc;
  }
  return grad;
}

}  // namespace dsu
