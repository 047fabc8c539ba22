#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "cometa/bce.hpp"
#include "cometa/error.hpp"

namespace cometa::metrics {

/// Mann-Whitney AUC: (concordant pairs + 0.5 tied pairs) / (positives * negatives),
/// via average ranks in O(n log n).
inline double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: score and label counts differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positives = 0.0, negatives = 0.0, rank_sum = 0.0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t stop = start;
    while (stop < order.size() && scores[order[stop]] == scores[order[start]]) ++stop;
    // Ranks start..stop-1 (0-based) share their average.
    const double avg_rank = 0.5 * static_cast<double>(start + stop - 1);
    for (std::size_t k = start; k < stop; ++k) {
      const double y = labels[order[k]];
      if (y == 1.0) {
        positives += 1.0;
        rank_sum += avg_rank;
      } else if (y == 0.0) {
        negatives += 1.0;
      } else {
        throw DataError("auc: labels must be 0 or 1");
      }
    }
    start = stop;
  }
  if (positives == 0.0 || negatives == 0.0) throw DataError("auc needs both positive and negative labels");
  const double u = rank_sum - positives * (positives - 1.0) / 2.0;
  return u / (positives * negatives);
}

inline double logloss(std::span<const double> scores, std::span<const double> labels) {
  return binary_cross_entropy(scores, labels);
}

}  // namespace cometa::metrics
