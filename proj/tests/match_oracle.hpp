#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "dive/assignment.hpp"

namespace dive::testing_support {

// best total over every injective mapping of the smaller side
inline double brute_force_max(const std::vector<std::vector<double>>& sim) {
  const std::size_t n = sim.size(), m = n ? sim[0].size() : 0;
  if (n == 0 || m == 0) return 0.0;
  const bool rows_small = n <= m;
  const std::size_t k = rows_small ? n : m, big = rows_small ? m : n;
  std::vector<std::size_t> idx(big);
  std::iota(idx.begin(), idx.end(), 0);
  double best = -1e300;
  // permutations of the big side; the first k slots are the partners
  do {
    std::vector<double> vals;
    for (std::size_t a = 0; a < k; ++a) vals.push_back(rows_small ? sim[a][idx[a]] : sim[idx[a]][a]);
    best = std::max(best, stable_sum(vals));
  } while (std::next_permutation(idx.begin(), idx.end()));
  return best;
}

}  // namespace dive::testing_support
