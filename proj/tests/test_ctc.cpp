#include <doctest.h>

#include <cmath>
#include <random>

#include "dsu/ctc.hpp"
#include "oracles.hpp"

using namespace dsu;

namespace {

double grad_norm(const Matrix& g) {
  double s = 0;
  for (double v : g.values()) s += v * v;
  return std::sqrt(s);
}

// Every label sequence over symbols 1..V-1 of length <= max_len.
std::vector<std::vector<int>> all_targets(int V, std::size_t max_len) {
  std::vector<std::vector<int>> out{{}};
  std::vector<std::vector<int>> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& t : frontier) {
      for (int k = 1; k < V; ++k) {
        auto e = t;
        e.push_back(k);
        next.push_back(e);
      }
    }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

}  // namespace

TEST_CASE("single frame single label") {
  const Matrix logits(1, 2, 0.0);
  CHECK(ctc_loss(logits, std::vector<Label>{1}) == doctest::Approx(0.6931471805599453).epsilon(1e-14));
}

TEST_CASE("two frames, three valid paths of four") {
  const Matrix logits(2, 2, 0.0);
  CHECK(ctc_loss(logits, std::vector<Label>{1}) == doctest::Approx(0.2876820724517809).epsilon(1e-14));
}

TEST_CASE("repeated label needs a separating blank") {
  CHECK(ctc_min_frames(std::vector<Label>{1, 1}) == 3);
  CHECK(ctc_min_frames(std::vector<Label>{1, 2, 2, 2}) == 6);
  CHECK(ctc_min_frames(std::vector<Label>{}) == 0);
  CHECK_THROWS_AS(ctc_loss(Matrix(1, 3), std::vector<Label>{1, 1}), InfeasibleError);
  CHECK_THROWS_AS(ctc_loss(Matrix(2, 3), std::vector<Label>{1, 1}), InfeasibleError);
  CHECK_NOTHROW(ctc_loss(Matrix(3, 3), std::vector<Label>{1, 1}));
}

TEST_CASE("labels must be in [1, V-1] and logits finite") {
  CHECK_THROWS_AS(ctc_loss(Matrix(3, 3), std::vector<Label>{0}), ArgumentError);
  CHECK_THROWS_AS(ctc_loss(Matrix(3, 3), std::vector<Label>{3}), ArgumentError);
  Matrix bad(2, 3);
  bad(1, 1) = INFINITY;
  CHECK_THROWS_AS(ctc_loss(bad, std::vector<Label>{1}), ArgumentError);
}

TEST_CASE("forward DP equals exhaustive path enumeration") {
  std::mt19937_64 rng(2024);
  for (int V = 2; V <= 3; ++V) {
    for (std::size_t T = 1; T <= 4; ++T) {
      for (const auto& target : all_targets(V, 2)) {
        for (int trial = 0; trial < 5; ++trial) {
          const auto logits = oracle::random_matrix(T, static_cast<std::size_t>(V), rng, 2.0);
          const double expected = oracle::brute_force_ctc(logits, target);
          const std::vector<Label> labels(target.begin(), target.end());
          if (std::isinf(expected)) {
            CHECK_THROWS_AS(ctc_loss(logits, labels), InfeasibleError);
          } else {
            CHECK(std::abs(ctc_loss(logits, labels) - expected) < 1e-9);
          }
        }
      }
    }
  }
}

TEST_CASE("loss is nonnegative and zero only for certain single paths") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto logits = oracle::random_matrix(5, 4, rng, 3.0);
    CHECK(ctc_loss(logits, std::vector<Label>{1, 3}) >= 0.0);
  }
  Matrix certain(1, 2);
  certain(0, 1) = 800.0;
  CHECK(ctc_loss(certain, std::vector<Label>{1}) == 0.0);
}

TEST_CASE("gradient rows sum to zero") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto logits = oracle::random_matrix(6, 5, rng, 2.0);
    const auto g = ctc_grad(logits, std::vector<Label>{2, 2, 4});
    for (std::size_t t = 0; t < g.rows(); ++t) {
      double s = 0;
      for (double v : g.row(t)) s += v;
      CHECK(std::abs(s) < 1e-10);
    }
  }
}

TEST_CASE("gradient matches central differences") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> label(1, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto logits = oracle::random_matrix(5, 4, rng, 1.5);
    const std::vector<Label> target{label(rng), label(rng)};
    const auto analytic = ctc_grad(logits, target);
    const auto numeric = oracle::central_diff(
        [&](const std::vector<double>& x) {
          Matrix m(5, 4);
          m.values() = x;
          return ctc_loss(m, target);
        },
        logits.values());
    CHECK(oracle::relative_error(analytic.values(), numeric) < 1e-5);
  }
}

TEST_CASE("loss_and_grad agrees with loss") {
  std::mt19937_64 rng(8);
  const auto logits = oracle::random_matrix(7, 3, rng);
  const std::vector<Label> target{1, 2, 1};
  CHECK(ctc_loss_and_grad(logits, target).loss == ctc_loss(logits, target));
}

TEST_CASE("peaked logits matching the target give a near-zero gradient") {
  // a a b b  with a confident margin on every frame
  Matrix logits(4, 3, 0.0);
  logits(0, 1) = logits(1, 1) = 20.0;
  logits(2, 2) = logits(3, 2) = 20.0;
  const auto r = ctc_loss_and_grad(logits, std::vector<Label>{1, 2});
  CHECK(r.loss < 1e-6);
  CHECK(grad_norm(r.grad) < 1e-3);
}

TEST_CASE("greedy decoding collapses repeats and drops blanks") {
  auto path = [](std::vector<int> argmax, std::size_t V) {
    Matrix m(argmax.size(), V, 0.0);
    for (std::size_t t = 0; t < argmax.size(); ++t) m(t, static_cast<std::size_t>(argmax[t])) = 1.0;
    return m;
  };
  CHECK(greedy_decode(path({1, 1, 0, 2}, 3)) == std::vector<Label>{1, 2});
  CHECK(greedy_decode(path({0, 0, 0}, 3)).empty());
  CHECK(greedy_decode(path({1, 0, 1}, 3)) == std::vector<Label>{1, 1});
  // ties go to the lowest index
  CHECK(greedy_decode(Matrix(2, 3, 0.5)).empty());
  Matrix tie(1, 3, 0.0);
  tie(0, 1) = tie(0, 2) = 1.0;
  CHECK(greedy_decode(tie) == std::vector<Label>{1});
}

TEST_CASE("vocab from transcripts is sorted and rejects unknown symbols") {
  const TextTable t{{"u1", "cab"}, {"u2", "b\xc3\xa9"}};
  const auto v = LabelVocab::from_transcripts(t);
  CHECK(v.size() == 5);
  CHECK(v.encode_utf8("abc") == std::vector<Label>{1, 2, 3});
  CHECK(v.encode_utf8("\xc3\xa9") == std::vector<Label>{4});
  CHECK(utf8_encode(v.decode(std::vector<Label>{3, 4})) == "c\xc3\xa9");
  CHECK_THROWS_AS(v.encode_utf8("z"), ArgumentError);
  CHECK_THROWS_AS(LabelVocab(U"aa"), ArgumentError);
}
