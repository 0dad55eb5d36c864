#pragma once

// Score-level combination of the response model's probe and the verifier's
// probe, with the mixing weight chosen on validation data.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sce/core/error.hpp"
#include "sce/evalkit/auroc.hpp"

namespace sce::probe {

inline double fuse(double s_m, double s_v, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("lambda must lie in [0, 1]");
  return (1.0 - lambda) * s_m + lambda * s_v;
}

// {0, 0.05, ..., 1.0}; each point is i/20 so the grid holds exact endpoints.
inline std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
  return grid;
}

inline void validate_lambda_grid(std::span<const double> grid) {
  if (grid.empty()) throw ArgumentError("lambda grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) throw ArgumentError("lambda grid values must lie in [0, 1]");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ArgumentError("lambda grid must be strictly increasing");
  }
}

struct FusionConfig {
  std::vector<double> lambda_grid = default_lambda_grid();
  double selected_lambda = 0.0;

  void validate() const {
    validate_lambda_grid(lambda_grid);
    bool found = false;
    for (double l : lambda_grid) found = found || l == selected_lambda;
    if (!found) throw ArgumentError("selected lambda is not on the grid");
  }
  bool operator==(const FusionConfig&) const = default;
};

inline std::vector<double> fuse_all(std::span<const double> s_m, std::span<const double> s_v, double lambda) {
  if (s_m.size() != s_v.size()) throw ArgumentError("fused score lists differ in length");
  std::vector<double> out(s_m.size());
  for (std::size_t i = 0; i < s_m.size(); ++i) out[i] = fuse(s_m[i], s_v[i], lambda);
  return out;
}

// Validation AUROC of the fused scores at every grid point.
inline std::vector<double> lambda_curve(std::span<const double> s_m, std::span<const double> s_v,
                                        std::span<const int> z, std::span<const double> grid) {
  validate_lambda_grid(grid);
  if (s_m.size() != z.size()) throw ArgumentError("scores and labels differ in length");
  std::vector<double> out;
  for (double l : grid) out.push_back(evalkit::auroc(fuse_all(s_m, s_v, l), z));
  return out;
}

// Argmax of the validation AUROC over the grid; the smallest lambda wins ties.
inline FusionConfig select_lambda(std::span<const double> s_m, std::span<const double> s_v,
                                  std::span<const int> z, std::span<const double> grid) {
  const auto curve = lambda_curve(s_m, s_v, z, grid);
  std::size_t best = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i] > curve[best]) best = i;
  return {std::vector<double>(grid.begin(), grid.end()), grid[best]};
}

}  // namespace sce::probe
