#pragma once

// Shared generators for the unit and acceptance suites.

#include <cstdint>

#include "rmi/region.hpp"
#include "rmi/rng.hpp"

namespace rmi::testsupport {

// Random paired cloud: binary (or fractional) y points, uniform p
// points. side in [1, 3] keeps the eigenvalue oracles applicable.
inline RegionDistribution random_distribution(SplitMix64& rng, int max_side = 3,
                                              bool fractional_y = false) {
  const std::size_t side = 1 + rng.next_below(max_side);
  const std::size_t d = side * side;
  const std::size_t n = d + 2 + rng.next_below(200);
  RegionDistribution dist;
  dist.dim = d;
  dist.count = n;
  dist.points_y = DenseTensor({d, n});
  dist.points_p = DenseTensor({d, n});
  for (double& v : dist.points_y.values()) {
    v = fractional_y ? rng.uniform()
                     : static_cast<double>(rng.next_below(2));
  }
  for (double& v : dist.points_p.values()) v = rng.uniform();
  dist.positions.resize(n);
  for (std::size_t j = 0; j < n; ++j) dist.positions[j] = j;
  return dist;
}

}  // namespace rmi::testsupport
