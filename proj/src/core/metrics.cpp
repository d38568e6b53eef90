#include "metrics.hpp"

#include <algorithm>

namespace tvr {

int rank_of_truth(const Tensor& scores, int truth) {
  if (scores.rank() != 1 || scores.size() < 1)
    fail(ErrorCode::dimension, "rank_of_truth: need a nonempty score vector");
  if (truth < 0 || truth >= scores.size())
    fail(ErrorCode::usage, "rank_of_truth: truth index out of range");
  if (!scores.all_finite())
    fail(ErrorCode::degenerate, "rank_of_truth: non-finite score");
  const double t = scores[truth];
  int higher = 0;
  for (int i = 0; i < scores.size(); ++i)
    if (scores[i] > t) ++higher;
  return 1 + higher;
}

RetrievalReport evaluate(const Tensor& fused, Direction dir) {
  if (fused.rank() != 2 || fused.rows() != fused.cols() || fused.rows() < 1)
    fail(ErrorCode::dimension, "evaluate: need a square score matrix");
  if (!fused.all_finite())
    fail(ErrorCode::degenerate, "evaluate: non-finite score");
  const int b = fused.rows();

  RetrievalReport rep;
  rep.ranks.resize(b);
  for (int q = 0; q < b; ++q) {
    Tensor scores = Tensor::vec(b);
    if (dir == Direction::t2v)
      for (int i = 0; i < b; ++i) scores[i] = fused.at(i, q);
    else
      for (int j = 0; j < b; ++j) scores[j] = fused.at(q, j);
    rep.ranks[q] = rank_of_truth(scores, q);
  }

  int hit1 = 0, hit5 = 0, hit10 = 0;
  double sum = 0.0;
  for (int r : rep.ranks) {
    hit1 += r <= 1;
    hit5 += r <= 5;
    hit10 += r <= 10;
    sum += r;
  }
  rep.r1 = 100.0 * hit1 / b;
  rep.r5 = 100.0 * hit5 / b;
  rep.r10 = 100.0 * hit10 / b;
  rep.mean_rank = sum / b;

  std::vector<int> sorted = rep.ranks;
  std::sort(sorted.begin(), sorted.end());
  rep.median_rank = b % 2 == 1
                        ? sorted[b / 2]
                        : (sorted[b / 2 - 1] + sorted[b / 2]) / 2.0;
  return rep;
}

}  // namespace tvr
