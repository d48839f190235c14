#ifndef VINECAL_DESIGN_HPP
#define VINECAL_DESIGN_HPP

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vinecal/rng.hpp"

namespace vinecal {

using Bounds = std::vector<std::pair<double, double>>;

/// Latin hypercube: every 1-D projection has one point per equal-width stratum, jittered
/// uniformly inside it.
inline std::vector<std::vector<double>> latin_hypercube(std::size_t count, const Bounds& bounds, Rng& rng) {
  if (count < 1) throw std::invalid_argument("latin_hypercube: count must be >= 1");
  if (bounds.empty()) throw std::invalid_argument("latin_hypercube: need at least one dimension");
  for (const auto& [lo, hi] : bounds)
    if (!(lo < hi)) throw std::invalid_argument("latin_hypercube: each bound needs lo < hi");
  std::vector<std::vector<double>> pts(count, std::vector<double>(bounds.size()));
  std::vector<std::size_t> perm(count);
  for (std::size_t d = 0; d < bounds.size(); ++d) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto [lo, hi] = bounds[d];
    const double w = (hi - lo) / static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i)
      pts[i][d] = std::min(hi, lo + w * (static_cast<double>(perm[i]) + uniform01(rng)));
  }
  return pts;
}

/// Full tensor grid with `per_dim` equally spaced points (ends included) per dimension.
inline std::vector<std::vector<double>> tensor_grid(std::size_t per_dim, const Bounds& bounds) {
  if (per_dim < 2) throw std::invalid_argument("tensor_grid: need at least two points per dimension");
  std::vector<std::vector<double>> pts{{}};
  for (const auto& [lo, hi] : bounds) {
    std::vector<std::vector<double>> next;
    for (const auto& p : pts)
      for (std::size_t k = 0; k < per_dim; ++k) {
        auto q = p;
        q.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(per_dim - 1));
        next.push_back(std::move(q));
      }
    pts = std::move(next);
  }
  return pts;
}

}  // namespace vinecal

#endif  // VINECAL_DESIGN_HPP
