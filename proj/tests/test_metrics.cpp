#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "core/metrics.hpp"
#include "support/checks.hpp"

using namespace tvr;
using namespace testsup;

namespace {

// Independent rank oracle: sort a copy descending and take the first
// position holding the truth's score. Equal scores ahead of the truth
// collapse onto the same first position, matching tie-favoring ranks.
int sort_rank_oracle(const Tensor& scores, int truth) {
  std::vector<double> sorted(scores.data().begin(), scores.data().end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  for (int pos = 0; pos < static_cast<int>(sorted.size()); ++pos)
    if (sorted[pos] == scores[truth]) return pos + 1;
  return -1;
}

}  // namespace

TEST_CASE("rank counts strictly higher scores") {
  Tensor s = Tensor::from({0.9, 0.5, 0.7});
  CHECK(rank_of_truth(s, 0) == 1);
  CHECK(rank_of_truth(s, 1) == 3);
  CHECK(rank_of_truth(s, 2) == 2);
}

TEST_CASE("ties resolve in the truth's favor") {
  Tensor s = Tensor::from({0.5, 0.5});
  CHECK(rank_of_truth(s, 0) == 1);
  CHECK(rank_of_truth(s, 1) == 1);
  Tensor flat = Tensor::full(6, 1.25);
  for (int i = 0; i < 6; ++i) CHECK(rank_of_truth(flat, i) == 1);
}

TEST_CASE("rank agrees with a sort-based oracle") {
  Rng rng(301);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + rng.uniform_int(0, 19);
    Tensor s = random_vec(rng, n);
    if (trial % 3 == 0 && n >= 2) s[rng.uniform_int(0, n - 1)] = s[0];  // force ties
    const int truth = rng.uniform_int(0, n - 1);
    CHECK(rank_of_truth(s, truth) == sort_rank_oracle(s, truth));
  }
}

TEST_CASE("a dominant diagonal is a perfect retrieval") {
  const int b = 12;
  Tensor fused = Tensor::mat(b, b);
  Rng rng(302);
  for (int i = 0; i < fused.size(); ++i) fused[i] = rng.uniform() * 0.5;
  for (int i = 0; i < b; ++i) fused.at(i, i) = 2.0 + rng.uniform();
  for (Direction dir : {Direction::t2v, Direction::v2t}) {
    RetrievalReport rep = evaluate(fused, dir);
    CHECK(rep.r1 == 100.0);
    CHECK(rep.r5 == 100.0);
    CHECK(rep.r10 == 100.0);
    CHECK(rep.median_rank == 1.0);
    CHECK(rep.mean_rank == 1.0);
  }
}

TEST_CASE("a suppressed diagonal lands every truth last") {
  const int b = 4;
  Tensor fused = Tensor::mat(b, b);
  fused.fill(1.0);
  for (int i = 0; i < b; ++i) fused.at(i, i) = -10.0;
  RetrievalReport rep = evaluate(fused, Direction::v2t);
  CHECK(rep.r1 == 0.0);
  CHECK(rep.mean_rank == b);
  CHECK(rep.median_rank == b);
  for (int r : rep.ranks) CHECK(r == b);
}

TEST_CASE("directions read the matrix along the right axis") {
  Tensor fused = Tensor::from_rows({{1.0, 9.0, 9.0},
                                    {0.0, 2.0, 0.0},
                                    {0.0, 0.0, 3.0}});
  RetrievalReport v2t = evaluate(fused, Direction::v2t);
  CHECK(v2t.ranks == std::vector<int>{3, 1, 1});
  CHECK(v2t.r1 == doctest::Approx(200.0 / 3));
  CHECK(v2t.median_rank == 1.0);
  RetrievalReport t2v = evaluate(fused, Direction::t2v);
  CHECK(t2v.ranks == std::vector<int>{1, 2, 2});
  CHECK(t2v.r1 == doctest::Approx(100.0 / 3));
  CHECK(t2v.median_rank == 2.0);
  CHECK(t2v.mean_rank == doctest::Approx(5.0 / 3));
}

TEST_CASE("even query counts take the midpoint median") {
  // Ranks 1, 2, 3, 4 by construction: row q has q competitors above the truth.
  const int b = 4;
  Tensor fused = Tensor::mat(b, b);
  for (int i = 0; i < b; ++i) {
    fused.at(i, i) = 0.5;
    int placed = 0;
    for (int j = 0; j < b && placed < i; ++j) {
      if (j == i) continue;
      fused.at(i, j) = 1.0 + j;
      ++placed;
    }
  }
  RetrievalReport rep = evaluate(fused, Direction::v2t);
  std::vector<int> sorted = rep.ranks;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{1, 2, 3, 4});
  CHECK(rep.median_rank == 2.5);
  CHECK(rep.mean_rank == 2.5);
  CHECK(rep.r1 == 25.0);
  CHECK(rep.r5 == 100.0);
}

TEST_CASE("ranks are invariant under strictly increasing transforms") {
  Rng rng(303);
  for (int trial = 0; trial < 50; ++trial) {
    const int b = 2 + rng.uniform_int(0, 8);
    Tensor fused = random_mat(rng, b, b);
    if (trial % 2 == 0) fused.at(0, b - 1) = fused.at(0, 0);  // include a tie
    Tensor mapped = fused;
    for (int i = 0; i < mapped.size(); ++i)
      mapped[i] = std::tanh(mapped[i]) + 3.0 * mapped[i];
    for (Direction dir : {Direction::t2v, Direction::v2t}) {
      RetrievalReport a = evaluate(fused, dir);
      RetrievalReport ab = evaluate(mapped, dir);
      CHECK(a.ranks == ab.ranks);
      CHECK(a.r1 == ab.r1);
      CHECK(a.median_rank == ab.median_rank);
      CHECK(a.mean_rank == ab.mean_rank);
    }
  }
}

TEST_CASE("single-item matrices are perfect by definition") {
  Tensor fused = Tensor::from_rows({{-2.0}});
  for (Direction dir : {Direction::t2v, Direction::v2t}) {
    RetrievalReport rep = evaluate(fused, dir);
    CHECK(rep.ranks == std::vector<int>{1});
    CHECK(rep.r1 == 100.0);
    CHECK(rep.median_rank == 1.0);
  }
}

TEST_CASE("malformed inputs are rejected") {
  CHECK_THROWS_AS(evaluate(Tensor::mat(2, 3), Direction::t2v), Error);
  CHECK_THROWS_AS(evaluate(Tensor::vec(3), Direction::t2v), Error);
  Tensor bad = Tensor::mat(2, 2);
  bad.at(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(evaluate(bad, Direction::v2t), Error);
  Tensor s = Tensor::from({1.0, 2.0});
  CHECK_THROWS_AS(rank_of_truth(s, 2), Error);
  CHECK_THROWS_AS(rank_of_truth(s, -1), Error);
}
