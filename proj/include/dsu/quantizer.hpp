#ifndef DSU_QUANTIZER_HPP
#define DSU_QUANTIZER_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace dsu {

using Unit = std::int32_t;

// K centroids under squared Euclidean distance.
struct Codebook {
  std::uint32_t k = 0;
  std::uint32_t dim = 0;
  std::vector<float> centroids;  // K x D row-major

  std::span<const float> centroid(std::size_t i) const { return {centroids.data() + i * dim, dim}; }

  bool operator==(const Codebook&) const = default;
};

inline constexpr std::uint32_t kDefaultClusters = 2000;

struct KmeansConfig {
  std::uint32_t k = kDefaultClusters;
  std::uint32_t max_iters = 100;
  double tolerance = 1e-6;  // relative distortion improvement
  std::uint64_t seed = 0;
  std::optional<std::size_t> sample_cap;
};

struct KmeansResult {
  Codebook codebook;
  std::vector<double> distortion_history;  // one entry per assignment step
};

// k-means++ seeding followed by Lloyd iterations. frames is N x dim
// row-major.
KmeansResult kmeans_train(std::span<const float> frames, std::size_t dim, const KmeansConfig& config);

// Nearest centroid per frame, ties to the lowest index.
std::vector<Unit> assign(std::span<const float> frames, std::size_t dim, const Codebook& codebook);

// Sum over frames of the squared distance to the nearest centroid.
double distortion(std::span<const float> frames, std::size_t dim, const Codebook& codebook);

void write_codebook(const Codebook& codebook, std::ostream& out);
Codebook read_codebook(std::istream& in);
void save_codebook(const Codebook& codebook, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace dsu

#endif  // DSU_QUANTIZER_HPP
