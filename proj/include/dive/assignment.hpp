#pragma once

#include <vector>

namespace dive {

/// Maximum-total-weight one-to-one assignment on a rectangular matrix
/// (Hungarian method, O(n^3)). Returns, for every row, the assigned column or
/// -1; exactly min(rows, cols) rows are assigned.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight);

}  // namespace dive
