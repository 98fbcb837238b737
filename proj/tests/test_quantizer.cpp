#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <random>
#include <sstream>

#include "dsu/common.hpp"
#include "dsu/feature_store.hpp"
#include "dsu/quantizer.hpp"
#include "oracles.hpp"

using namespace dsu;

namespace {

KmeansConfig config_with(std::uint32_t k, std::uint64_t seed = 0) {
  KmeansConfig c;
  c.k = k;
  c.seed = seed;
  return c;
}

bool non_increasing(const std::vector<double>& h) {
  for (std::size_t i = 1; i < h.size(); ++i) {
    if (h[i] > h[i - 1]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("two distinct points, two clusters") {
  const std::vector<float> x{0.0f, 10.0f};
  const auto r = kmeans_train(x, 1, config_with(2));
  std::vector<float> c = r.codebook.centroids;
  std::sort(c.begin(), c.end());
  CHECK(c == std::vector<float>{0.0f, 10.0f});
  CHECK(r.distortion_history.back() == 0.0);
}

TEST_CASE("{0,1,9,10} with K=2 matches the exhaustive 2-partition optimum") {
  const std::vector<double> xs{0, 1, 9, 10};
  const auto best = oracle::brute_force_two_means(xs);
  REQUIRE(best.low == 0.5);
  REQUIRE(best.high == 9.5);
  REQUIRE(best.cost == 1.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::vector<float> x{0, 1, 9, 10};
    const auto r = kmeans_train(x, 1, config_with(2, seed));
    std::vector<float> c = r.codebook.centroids;
    std::sort(c.begin(), c.end());
    CHECK(c[0] == static_cast<float>(best.low));
    CHECK(c[1] == static_cast<float>(best.high));
    CHECK(r.distortion_history.back() == best.cost);
    CHECK(distortion(x, 1, r.codebook) == best.cost);
  }
}

TEST_CASE("K=1 gives the mean and N times the variance") {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(3.0f, 2.0f);
  std::vector<float> x(3 * 64);
  for (auto& v : x) v = n(rng);
  const auto r = kmeans_train(x, 3, config_with(1));
  for (std::size_t d = 0; d < 3; ++d) {
    double mean = 0;
    for (std::size_t i = 0; i < 64; ++i) mean += x[i * 3 + d];
    mean /= 64;
    CHECK(r.codebook.centroids[d] == doctest::Approx(mean).epsilon(1e-6));
  }
  double scatter = 0;
  for (std::size_t d = 0; d < 3; ++d) {
    double mean = 0;
    for (std::size_t i = 0; i < 64; ++i) mean += x[i * 3 + d];
    mean /= 64;
    for (std::size_t i = 0; i < 64; ++i) scatter += (x[i * 3 + d] - mean) * (x[i * 3 + d] - mean);
  }
  CHECK(r.distortion_history.back() == doctest::Approx(scatter).epsilon(1e-9));
}

TEST_CASE("distortion history is non-increasing on random data") {
  std::mt19937_64 rng(10);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dim = 1 + trial % 4;
    std::vector<float> x(dim * (20 + trial * 3));
    for (auto& v : x) v = n(rng);
    const auto r = kmeans_train(x, dim, config_with(2 + trial % 6, static_cast<std::uint64_t>(trial)));
    CHECK(non_increasing(r.distortion_history));
    CHECK(r.distortion_history.back() == doctest::Approx(distortion(x, dim, r.codebook)).epsilon(1e-5));
  }
}

TEST_CASE("recovers well separated Gaussian means within half a sigma") {
  const double sigma = 0.5;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> n(0.0, 1.0);
    const std::size_t K = 6, D = 4, per = 150;
    std::vector<std::vector<double>> means;
    while (means.size() < K) {
      std::vector<double> m(D);
      for (auto& v : m) v = n(rng) * 15.0 * sigma;
      bool ok = true;
      for (const auto& o : means) {
        double d2 = 0;
        for (std::size_t d = 0; d < D; ++d) d2 += (m[d] - o[d]) * (m[d] - o[d]);
        ok = ok && std::sqrt(d2) >= 10 * sigma;
      }
      if (ok) means.push_back(m);
    }
    std::vector<float> x;
    for (const auto& m : means) {
      for (std::size_t i = 0; i < per; ++i) {
        for (std::size_t d = 0; d < D; ++d) x.push_back(static_cast<float>(m[d] + sigma * n(rng)));
      }
    }
    const auto r = kmeans_train(x, D, config_with(K, seed));
    for (const auto& m : means) {
      double best = 1e300;
      for (std::size_t c = 0; c < K; ++c) {
        double d2 = 0;
        for (std::size_t d = 0; d < D; ++d) d2 += std::pow(r.codebook.centroid(c)[d] - m[d], 2);
        best = std::min(best, std::sqrt(d2));
      }
      CHECK(best < 0.5 * sigma);
    }
  }
}

TEST_CASE("more clusters than distinct points still yields finite centroids") {
  const std::vector<float> x{1, 1, 1, 2, 2};
  const auto r = kmeans_train(x, 1, config_with(4));
  CHECK(r.codebook.k == 4);
  for (float c : r.codebook.centroids) CHECK(std::isfinite(c));
  CHECK(r.distortion_history.back() == 0.0);
}

TEST_CASE("training on data with at least K distinct points gives distinct centroids") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> x(2 * 40);
  for (auto& v : x) v = u(rng);
  const auto r = kmeans_train(x, 2, config_with(8, 3));
  for (std::size_t a = 0; a < 8; ++a) {
    for (std::size_t b = a + 1; b < 8; ++b) {
      const auto ca = r.codebook.centroid(a), cb = r.codebook.centroid(b);
      CHECK_FALSE(std::equal(ca.begin(), ca.end(), cb.begin()));
    }
  }
}

TEST_CASE("sample cap subsamples deterministically") {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> x(2 * 500);
  for (auto& v : x) v = n(rng);
  KmeansConfig c = config_with(4, 9);
  c.sample_cap = 100;
  const auto a = kmeans_train(x, 2, c);
  const auto b = kmeans_train(x, 2, c);
  CHECK(a.codebook == b.codebook);
  CHECK(a.distortion_history == b.distortion_history);
}

TEST_CASE("kmeans argument errors") {
  CHECK_THROWS_AS(kmeans_train(std::vector<float>{}, 2, config_with(2)), ArgumentError);
  CHECK_THROWS_AS(kmeans_train(std::vector<float>{1, 2, 3}, 2, config_with(2)), ArgumentError);
  CHECK_THROWS_AS(kmeans_train(std::vector<float>{1, 2}, 1, config_with(0)), ArgumentError);
}

TEST_CASE("assign picks the nearest centroid, ties to the lowest index") {
  Codebook cb;
  cb.k = 8;
  cb.dim = 1;
  cb.centroids = {0, 10, 20, 30, 40, 50, 60, 70};
  CHECK(assign(std::vector<float>{70.0f}, 1, cb) == std::vector<Unit>{7});
  Codebook tie;
  tie.k = 6;
  tie.dim = 1;
  tie.centroids = {100, 100, 2, 100, 100, 4};
  CHECK(assign(std::vector<float>{3.0f}, 1, tie) == std::vector<Unit>{2});
  CHECK_THROWS_AS(assign(std::vector<float>{1.0f, 2.0f}, 2, cb), ArgumentError);
}

TEST_CASE("assign is permutation equivariant") {
  std::mt19937_64 rng(6);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> x(3 * 50);
  for (auto& v : x) v = n(rng);
  const auto cb = kmeans_train(x, 3, config_with(5)).codebook;
  const auto units = assign(x, 3, cb);
  std::vector<std::size_t> perm(50);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<float> px;
  for (auto i : perm) px.insert(px.end(), x.begin() + i * 3, x.begin() + i * 3 + 3);
  const auto punits = assign(px, 3, cb);
  for (std::size_t j = 0; j < 50; ++j) CHECK(punits[j] == units[perm[j]]);
}

TEST_CASE("distortion hand cases") {
  Codebook cb;
  cb.k = 2;
  cb.dim = 1;
  cb.centroids = {0.5f, 9.5f};
  CHECK(distortion(std::vector<float>{0, 1, 9, 10}, 1, cb) == 1.0);
  CHECK(distortion(std::vector<float>{0.5f, 9.5f}, 1, cb) == 0.0);
  Codebook one;
  one.k = 1;
  one.dim = 2;
  one.centroids = {0, 0};
  CHECK(distortion(std::vector<float>{3, 4}, 2, one) == 25.0);
}

TEST_CASE("zero-noise planted corpus with K = classes quantizes to a relabeling") {
  SynthSpec spec;
  spec.noise_sigma = 0.0;
  spec.num_utts = 40;
  spec.num_layers = 1;
  spec.planted_layer = 1;
  const auto c = synth_generate(spec);
  std::vector<float> frames;
  for (const auto& u : c.archive.utterances) frames.insert(frames.end(), u.frames.begin(), u.frames.end());
  const auto cb = kmeans_train(frames, spec.feature_dim, config_with(spec.num_classes, 1)).codebook;
  std::map<char, std::set<Unit>> class_to_units;
  std::map<Unit, std::set<char>> unit_to_classes;
  for (const auto& u : c.archive.utterances) {
    const auto units = assign(u.frames, spec.feature_dim, cb);
    const auto& text = c.transcripts.at(u.id);
    for (std::size_t t = 0; t < units.size(); ++t) {
      const char sym = text[t / spec.frames_per_symbol];
      class_to_units[sym].insert(units[t]);
      unit_to_classes[units[t]].insert(sym);
    }
  }
  for (const auto& [sym, units] : class_to_units) CHECK(units.size() == 1);
  for (const auto& [unit, syms] : unit_to_classes) CHECK(syms.size() == 1);
}

TEST_CASE("codebook file roundtrip and validation") {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> x(4 * 30);
  for (auto& v : x) v = n(rng);
  const auto cb = kmeans_train(x, 4, config_with(3)).codebook;
  std::stringstream ss;
  write_codebook(cb, ss);
  const std::string bytes = ss.str();
  CHECK(bytes.size() == 16 + 3 * 4 * 4);
  std::istringstream in(bytes);
  CHECK(read_codebook(in) == cb);

  std::istringstream bad("XXXX");
  CHECK_THROWS_AS(read_codebook(bad), FormatError);
  std::istringstream truncated(bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(read_codebook(truncated), CorruptionError);
  auto v2 = bytes;
  v2[4] = 2;
  std::istringstream version(v2);
  CHECK_THROWS_AS(read_codebook(version), UnsupportedVersionError);
}
