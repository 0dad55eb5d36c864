#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "sce/core/error.hpp"

namespace sce::evalkit {

// Probability that a random positive (z = 1) outscores a random negative,
// ties counted one half. Mann-Whitney U from mid-ranks, O(n log n). Ranks
// are kept doubled so the rank sum stays an exact integer.
inline double auroc(std::span<const double> scores, std::span<const int> z) {
  if (scores.size() != z.size()) throw ArgumentError("auroc: scores and labels differ in length");
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] != 0 && z[i] != 1) throw ArgumentError("auroc: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw ArgumentError("auroc: scores must be finite");
    n_pos += z[i];
  }
  const auto n = static_cast<std::int64_t>(z.size());
  const std::int64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ArgumentError("auroc: both classes must be present");

  std::vector<std::size_t> order(z.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::int64_t rank_sum_x2 = 0;  // sum over positives of 2 * mid-rank (1-based)
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const auto mid_x2 = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (z[order[k]] == 1) rank_sum_x2 += mid_x2;
    i = j + 1;
  }
  const std::int64_t u_x2 = rank_sum_x2 - n_pos * (n_pos + 1);
  return static_cast<double>(u_x2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double delta_gap(double auroc_ce, double auroc_ie) { return auroc_ie - auroc_ce; }

}  // namespace sce::evalkit
