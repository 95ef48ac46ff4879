#include "dive/assignment.hpp"

#include <algorithm>
#include <limits>

#include "dive/error.hpp"

namespace dive {

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const std::size_t rows = weight.size();
  const std::size_t cols = rows == 0 ? 0 : weight[0].size();
  for (const auto& r : weight) {
    if (r.size() != cols) throw Error(ErrorCode::InvalidArgument, "ragged weight matrix");
  }
  std::vector<int> out(rows, -1);
  if (rows == 0 || cols == 0) return out;

  // square min-cost problem, 1-based, dummy cells cost 0
  const std::size_t n = std::max(rows, cols);
  auto cost = [&](std::size_t i, std::size_t j) {
    return (i <= rows && j <= cols) ? -weight[i - 1][j - 1] : 0.0;
  };
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] >= 1 && p[j] <= rows && j <= cols) out[p[j] - 1] = static_cast<int>(j - 1);
  }
  return out;
}

}  // namespace dive
