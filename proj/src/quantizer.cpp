#include "dsu/quantizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "dsu/common.hpp"

namespace dsu {
namespace {

template <typename A, typename B>
double squared_distance(std::span<const A> a, std::span<const B> b) {
  double acc = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = static_cast<double>(a[d]) - static_cast<double>(b[d]);
    acc += diff * diff;
  }
  return acc;
}

void check_frames(std::span<const float> frames, std::size_t dim) {
  if (dim == 0) throw ArgumentError("feature dim must be >= 1");
  if (frames.size() % dim != 0) throw ArgumentError("frame buffer is not a multiple of dim");
}

struct Assignment {
  std::vector<Unit> labels;
  std::vector<double> dist;  // squared distance to the assigned centroid
  double total = 0.0;
};

Assignment assign_all(std::span<const float> frames, std::size_t dim, const std::vector<double>& centroids,
                      std::size_t k) {
  const std::size_t n = frames.size() / dim;
  Assignment a;
  a.labels.resize(n);
  a.dist.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = frames.subspan(i * dim, dim);
    double best = std::numeric_limits<double>::infinity();
    Unit best_c = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double d = squared_distance(x, std::span<const double>(centroids.data() + c * dim, dim));
      if (d < best) {
        best = d;
        best_c = static_cast<Unit>(c);
      }
    }
    a.labels[i] = best_c;
    a.dist[i] = best;
    a.total += best;
  }
  return a;
}

// Greedy k-means++: each new center is the best of a few D^2-weighted
// candidates by resulting potential.
std::vector<double> seed_plus_plus(std::span<const float> frames, std::size_t dim, std::size_t k,
                                   std::mt19937_64& rng) {
  const std::size_t n = frames.size() / dim;
  std::vector<double> centroids;
  centroids.reserve(k * dim);
  auto add_center = [&](std::size_t idx) {
    for (std::size_t d = 0; d < dim; ++d) centroids.push_back(frames[idx * dim + d]);
  };
  add_center(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));

  std::vector<double> closest(n);
  for (std::size_t i = 0; i < n; ++i) {
    closest[i] = squared_distance(frames.subspan(i * dim, dim), std::span<const double>(centroids.data(), dim));
  }
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t c = 1; c < k; ++c) {
    const double potential = std::accumulate(closest.begin(), closest.end(), 0.0);
    std::size_t best_idx = 0;
    double best_potential = std::numeric_limits<double>::infinity();
    std::vector<double> best_closest;
    for (std::size_t trial = 0; trial < trials; ++trial) {
      std::size_t idx = 0;
      if (potential > 0.0) {
        double r = unit(rng) * potential;
        idx = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          r -= closest[i];
          if (r < 0.0) {
            idx = i;
            break;
          }
        }
      } else {
        // Fewer distinct points than clusters; repair later handles duplicates.
        idx = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      }
      std::vector<double> candidate(n);
      double cand_potential = 0.0;
      const auto center = frames.subspan(idx * dim, dim);
      for (std::size_t i = 0; i < n; ++i) {
        candidate[i] = std::min(closest[i], squared_distance(frames.subspan(i * dim, dim), center));
        cand_potential += candidate[i];
      }
      if (cand_potential < best_potential) {
        best_potential = cand_potential;
        best_idx = idx;
        best_closest = std::move(candidate);
      }
    }
    add_center(best_idx);
    closest = std::move(best_closest);
  }
  return centroids;
}

}  // namespace

KmeansResult kmeans_train(std::span<const float> all_frames, std::size_t dim, const KmeansConfig& config) {
  check_frames(all_frames, dim);
  if (config.k == 0) throw ArgumentError("k must be >= 1");
  if (!(config.tolerance >= 0.0)) throw ArgumentError("tolerance must be >= 0");
  const std::size_t total = all_frames.size() / dim;
  if (total == 0) throw ArgumentError("kmeans_train needs at least one frame");

  std::mt19937_64 rng(config.seed);
  std::vector<float> sampled;
  std::span<const float> frames = all_frames;
  if (config.sample_cap && *config.sample_cap < total) {
    if (*config.sample_cap == 0) throw ArgumentError("sample_cap must be >= 1");
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(*config.sample_cap);
    std::sort(order.begin(), order.end());
    sampled.reserve(order.size() * dim);
    for (auto i : order) sampled.insert(sampled.end(), all_frames.begin() + i * dim, all_frames.begin() + (i + 1) * dim);
    frames = sampled;
  }
  const std::size_t n = frames.size() / dim;
  const std::size_t k = config.k;

  std::vector<double> centroids = seed_plus_plus(frames, dim, k, rng);
  KmeansResult result;
  Assignment current = assign_all(frames, dim, centroids, k);
  result.distortion_history.push_back(current.total);

  for (std::uint32_t iter = 0; iter < config.max_iters && current.total > 0.0; ++iter) {
    std::vector<double> sums(k * dim, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(current.labels[i]);
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c * dim + d] += frames[i * dim + d];
    }
    std::vector<double> next = centroids;
    std::vector<bool> taken(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (std::size_t d = 0; d < dim; ++d) next[c * dim + d] = sums[c * dim + d] / static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      std::size_t far = n;
      double far_dist = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && current.dist[i] > far_dist) {
          far_dist = current.dist[i];
          far = i;
        }
      }
      if (far == n) continue;
      taken[far] = true;
      for (std::size_t d = 0; d < dim; ++d) next[c * dim + d] = frames[far * dim + d];
    }

    Assignment updated = assign_all(frames, dim, next, k);
    if (updated.total > current.total) break;  // rounding noise at convergence
    const bool unchanged = updated.labels == current.labels && next == centroids;
    const double improvement = (current.total - updated.total) / current.total;
    centroids = std::move(next);
    current = std::move(updated);
    result.distortion_history.push_back(current.total);
    if (unchanged || improvement < config.tolerance) break;
  }

  result.codebook.k = static_cast<std::uint32_t>(k);
  result.codebook.dim = static_cast<std::uint32_t>(dim);
  result.codebook.centroids.assign(centroids.begin(), centroids.end());
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    result.codebook.centroids[i] = static_cast<float>(centroids[i]);
  }
  return result;
}

std::vector<Unit> assign(std::span<const float> frames, std::size_t dim, const Codebook& codebook) {
  check_frames(frames, dim);
  if (dim != codebook.dim) throw ArgumentError("frame dim does not match codebook dim");
  if (codebook.k == 0) throw ArgumentError("empty codebook");
  const std::size_t n = frames.size() / dim;
  std::vector<Unit> units(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = frames.subspan(i * dim, dim);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < codebook.k; ++c) {
      const double d = squared_distance(x, codebook.centroid(c));
      if (d < best) {
        best = d;
        units[i] = static_cast<Unit>(c);
      }
    }
  }
  return units;
}

double distortion(std::span<const float> frames, std::size_t dim, const Codebook& codebook) {
  check_frames(frames, dim);
  if (dim != codebook.dim) throw ArgumentError("frame dim does not match codebook dim");
  if (codebook.k == 0) throw ArgumentError("empty codebook");
  const auto units = assign(frames, dim, codebook);
  double total = 0.0;
  for (std::size_t i = 0; i < units.size(); ++i) {
    total += squared_distance(frames.subspan(i * dim, dim), codebook.centroid(static_cast<std::size_t>(units[i])));
  }
  return total;
}

void write_codebook(const Codebook& codebook, std::ostream& out) {
  if (codebook.centroids.size() != std::size_t{codebook.k} * codebook.dim) {
    throw ValidationError("codebook centroid buffer does not match K x D");
  }
  std::string buf = "DSUK";
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  put_u32(1);
  put_u32(codebook.k);
  put_u32(codebook.dim);
  for (float v : codebook.centroids) put_u32(std::bit_cast<std::uint32_t>(v));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("codebook write failed");
}

Codebook read_codebook(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  if (data.size() < 4 || data.compare(0, 4, "DSUK") != 0) throw FormatError("bad codebook magic");
  if (data.size() < 16) throw CorruptionError("codebook header truncated");
  auto get_u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[off + i])) << (8 * i);
    return v;
  };
  if (get_u32(4) != 1) throw UnsupportedVersionError("unsupported codebook version");
  Codebook cb;
  cb.k = get_u32(8);
  cb.dim = get_u32(12);
  const std::size_t count = std::size_t{cb.k} * cb.dim;
  if (data.size() != 16 + count * 4) throw CorruptionError("codebook payload length mismatch");
  cb.centroids.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    cb.centroids[i] = std::bit_cast<float>(get_u32(16 + i * 4));
    if (!std::isfinite(cb.centroids[i])) throw ValidationError("non-finite centroid value");
  }
  return cb;
}

void save_codebook(const Codebook& codebook, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_codebook(codebook, out);
}

Codebook load_codebook(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_codebook(in);
}

}  // namespace dsu
