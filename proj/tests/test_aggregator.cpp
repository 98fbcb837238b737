#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "dsu/aggregator.hpp"
#include "oracles.hpp"

using namespace dsu;

namespace {

struct Stack {
  std::vector<float> values;
  std::size_t L, T, D;
  LayerStack view() const { return {values, L, T, D}; }
};

Stack random_stack(std::size_t L, std::size_t T, std::size_t D, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Stack s{std::vector<float>(L * T * D), L, T, D};
  for (auto& v : s.values) v = n(rng);
  return s;
}

// Loss = <G, weighted_sum(stack, lambdas)>, linear in the aggregate.
double probe_loss(const Stack& s, LayerWeights w, const std::vector<double>& lambdas, const Matrix& g) {
  w.lambdas = lambdas;
  const auto h = weighted_sum(s.view(), w);
  double acc = 0.0;
  for (std::size_t i = 0; i < g.values().size(); ++i) acc += g.values()[i] * h.values()[i];
  return acc;
}

}  // namespace

TEST_CASE("softmax of equal lambdas is uniform") {
  const std::vector<double> l{0, 0, 0};
  for (double w : softmax_weights(l)) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax of [ln 2, 0] is [2/3, 1/3]") {
  const std::vector<double> l{std::log(2.0), 0.0};
  const auto w = softmax_weights(l);
  CHECK(w[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax of [1000, 0] does not overflow") {
  const std::vector<double> l{1000.0, 0.0};
  const auto w = softmax_weights(l);
  // e^-1000 ~ 3.7e-435 is below the smallest subnormal double.
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 0.0);
  CHECK(std::isfinite(w[0]));
}

TEST_CASE("softmax rejects empty and non-finite input") {
  CHECK_THROWS_AS(softmax_weights(std::vector<double>{}), ArgumentError);
  CHECK_THROWS_AS(softmax_weights(std::vector<double>{0.0, NAN}), ArgumentError);
}

TEST_CASE("softmax is shift invariant and sums to one") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> l(1 + trial % 7);
    for (auto& x : l) x = n(rng);
    const double c = n(rng) * 10;
    auto shifted = l;
    for (auto& x : shifted) x += c;
    const auto a = softmax_weights(l);
    const auto b = softmax_weights(shifted);
    double sum = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(a[i] - b[i]) < 1e-12);
      CHECK(a[i] > 0.0);
      sum += a[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("layer_norm of a constant vector is zero") {
  for (double c : {-3.0, 0.0, 7.5}) {
    const std::vector<double> h{c, c};
    const auto y = layer_norm(h, {}, {}, 1e-5);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
  }
}

TEST_CASE("layer_norm hand-computed cases") {
  const std::vector<double> h{1.0, -1.0};
  // mean 0, variance 1: 1/sqrt(1 + 1e-5) = 0.9999950000374997
  const auto y = layer_norm(h, {}, {}, 1e-5);
  CHECK(y[0] == doctest::Approx(0.9999950000374997).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(-0.9999950000374997).epsilon(1e-14));

  const std::vector<double> gamma{2.0, 2.0};
  const std::vector<double> beta{1.0, 1.0};
  const auto z = layer_norm(h, gamma, beta, 1e-5);
  CHECK(z[0] == doctest::Approx(2.999990000074999).epsilon(1e-14));
  CHECK(z[1] == doctest::Approx(-0.999990000074999).epsilon(1e-13));
}

TEST_CASE("layer_norm output has zero mean and unit variance when var >> eps") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(2.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> h(16);
    for (auto& x : h) x = n(rng);
    const auto y = layer_norm(h, {}, {}, 1e-5);
    double mean = 0, var = 0;
    for (double v : y) mean += v;
    mean /= 16;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= 16;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("finetuned uniform average of two layers") {
  Stack s{{1.0f, 0.0f, 0.0f, 1.0f}, 2, 1, 2};
  const auto w = LayerWeights::uniform(AggregationMode::finetuned, 2);
  const auto h = weighted_sum(s.view(), w);
  CHECK(h(0, 0) == 0.5);
  CHECK(h(0, 1) == 0.5);
}

TEST_CASE("one-hot weights select a layer exactly") {
  std::mt19937_64 rng(9);
  const auto s = random_stack(3, 4, 5, rng);
  auto w = LayerWeights::uniform(AggregationMode::finetuned, 3);
  w.lambdas = {-1e4, 0.0, -1e4};
  const auto h = weighted_sum(s.view(), w);
  const auto layer = s.view().layer(1);
  for (std::size_t i = 0; i < layer.size(); ++i) CHECK(h.values()[i] == static_cast<double>(layer[i]));
}

TEST_CASE("pretrained mode adds the normalized last layer") {
  Stack s{{1.0f, -1.0f}, 1, 1, 2};
  const auto w = LayerWeights::uniform(AggregationMode::pretrained, 1);
  REQUIRE(w.lambdas.size() == 2);
  const auto h = weighted_sum(s.view(), w);
  // 0.5 * 1 + 0.5 * 0.9999950000374997
  CHECK(h(0, 0) == doctest::Approx(0.99999750001875).epsilon(1e-14));
  CHECK(h(0, 1) == doctest::Approx(-0.99999750001875).epsilon(1e-14));
}

TEST_CASE("weighted_sum shape checks") {
  std::mt19937_64 rng(1);
  const auto s = random_stack(3, 2, 2, rng);
  CHECK_THROWS_AS(weighted_sum(s.view(), LayerWeights::uniform(AggregationMode::finetuned, 2)), ArgumentError);
  CHECK_THROWS_AS(weighted_sum(s.view(), LayerWeights::uniform(AggregationMode::pretrained, 3 + 1)), ArgumentError);
  auto w = LayerWeights::uniform(AggregationMode::pretrained, 3);
  w.ln_gamma = {1.0, 1.0, 1.0};
  CHECK_THROWS_AS(weighted_sum(s.view(), w), ArgumentError);
  CHECK_THROWS_AS(weighted_sum_grad(s.view(), LayerWeights::uniform(AggregationMode::finetuned, 3), Matrix(3, 2)),
                  ArgumentError);
}

TEST_CASE("finetuned aggregate is a convex combination") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_stack(4, 3, 3, rng);
    auto w = LayerWeights::uniform(AggregationMode::finetuned, 4);
    for (auto& l : w.lambdas) l = n(rng);
    const auto h = weighted_sum(s.view(), w);
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t d = 0; d < 3; ++d) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t i = 0; i < 4; ++i) {
          lo = std::min(lo, static_cast<double>(s.view().frame(i, t)[d]));
          hi = std::max(hi, static_cast<double>(s.view().frame(i, t)[d]));
        }
        CHECK(h(t, d) >= lo - 1e-12);
        CHECK(h(t, d) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("weighted_sum is invariant to uniform lambda shifts") {
  std::mt19937_64 rng(4);
  const auto s = random_stack(3, 2, 4, rng);
  auto w = LayerWeights::uniform(AggregationMode::pretrained, 3);
  w.lambdas = {0.3, -1.0, 2.0, 0.5};
  auto shifted = w;
  for (auto& l : shifted.lambdas) l += 17.0;
  const auto a = weighted_sum(s.view(), w);
  const auto b = weighted_sum(s.view(), shifted);
  for (std::size_t i = 0; i < a.values().size(); ++i) CHECK(std::abs(a.values()[i] - b.values()[i]) < 1e-12);
}

TEST_CASE("zero upstream gradient gives zero lambda gradient") {
  std::mt19937_64 rng(2);
  const auto s = random_stack(3, 2, 2, rng);
  const auto g = weighted_sum_grad(s.view(), LayerWeights::uniform(AggregationMode::pretrained, 3), Matrix(2, 2));
  for (double x : g) CHECK(x == 0.0);
}

TEST_CASE("identical layers give an exactly zero gradient") {
  std::mt19937_64 rng(8);
  const auto one = random_stack(1, 3, 4, rng);
  Stack s{{}, 3, 3, 4};
  for (int i = 0; i < 3; ++i) s.values.insert(s.values.end(), one.values.begin(), one.values.end());
  auto w = LayerWeights::uniform(AggregationMode::finetuned, 3);
  w.lambdas = {0.7, -2.0, 1.3};
  const auto g = weighted_sum_grad(s.view(), w, oracle::random_matrix(3, 4, rng));
  for (double x : g) CHECK(x == 0.0);
}

TEST_CASE("weighted_sum_grad matches central differences") {
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto mode : {AggregationMode::finetuned, AggregationMode::pretrained}) {
    for (int trial = 0; trial < 100; ++trial) {
      const auto s = random_stack(3, 2, 2, rng);
      auto w = LayerWeights::uniform(mode, 3);
      for (auto& l : w.lambdas) l = n(rng);
      const auto up = oracle::random_matrix(2, 2, rng);
      const auto analytic = weighted_sum_grad(s.view(), w, up);
      const auto numeric =
          oracle::central_diff([&](const std::vector<double>& l) { return probe_loss(s, w, l, up); }, w.lambdas);
      CHECK(oracle::relative_error(analytic, numeric) < 1e-6);
    }
  }
}

TEST_CASE("weights text roundtrip is bit exact") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 3.0);
  auto w = LayerWeights::uniform(AggregationMode::pretrained, 5);
  for (auto& l : w.lambdas) l = n(rng);
  w.ln_gamma = {1.5, 0.25};
  w.ln_beta = {-0.1, 1e-30};
  std::stringstream ss;
  write_weights(w, ss);
  CHECK(read_weights(ss) == w);

  std::istringstream plain("mode=finetuned\neps=1e-05\n0 0.5 -1\n");
  const auto p = read_weights(plain);
  CHECK(p.mode == AggregationMode::finetuned);
  CHECK(p.lambdas == std::vector<double>{0.0, 0.5, -1.0});
  CHECK(p.num_layers() == 3);

  std::istringstream bad("mode=other\neps=1\n0\n");
  CHECK_THROWS_AS(read_weights(bad), ArgumentError);
  std::istringstream missing("eps=1\n0\n");
  CHECK_THROWS_AS(read_weights(missing), FormatError);
}
