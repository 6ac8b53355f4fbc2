#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ecac/grid.hpp"
#include "ecac/label_mask.hpp"
#include "ecac/random.hpp"

namespace ecac::test {

inline Grid random_grid(Shape shape, CounterRng& rng, double sd = 1.0, bool grad = false) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = sd * rng.normal();
  return Grid::from_values(std::move(shape), std::move(v), grad);
}

/// Random labels in [0, n); with probability `ignore` a pixel gets the ignore label.
inline LabelMask random_labels(std::size_t h, std::size_t w, std::size_t n, CounterRng& rng,
                               double ignore = 0.0) {
  std::vector<std::uint16_t> v(h * w);
  for (auto& l : v) {
    l = rng.uniform() < ignore ? kIgnoreLabel : static_cast<std::uint16_t>(rng.below(n));
  }
  return LabelMask(h, w, std::move(v));
}

/// Element [i, p] of a [c x h x w] grid viewed as [c x hw].
inline double cp(const Grid& g, std::size_t c, std::size_t p) {
  return g.values()[c * g.dim(1) * g.dim(2) + p];
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ecac::test
