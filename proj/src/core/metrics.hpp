#pragma once

#include <vector>

#include "tensor.hpp"

namespace tvr {

// Retrieval direction over a fused score matrix indexed [video][text]:
// text-to-video ranks each column's candidates, video-to-text each row's.
enum class Direction { t2v, v2t };

struct RetrievalReport {
  double r1 = 0.0;  // percentages in [0, 100]
  double r5 = 0.0;
  double r10 = 0.0;
  double median_rank = 0.0;  // midpoint of the two middles for even counts
  double mean_rank = 0.0;
  std::vector<int> ranks;  // 1-based rank of the matching item per query
};

// 1 + number of candidates scoring strictly higher than the truth; ties
// resolve in the truth's favor.
int rank_of_truth(const Tensor& scores, int truth);

RetrievalReport evaluate(const Tensor& fused, Direction dir);

}  // namespace tvr
