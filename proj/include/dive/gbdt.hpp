#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

namespace dive {

/// Regression tree in flat arrays; node 0 is the root. A node with
/// feature < 0 is a leaf carrying `value`; otherwise x[feature] < threshold
/// goes left.
struct RegressionTree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> value;

  double predict(const std::vector<double>& x) const;
  std::size_t node_count() const { return feature.size(); }
  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

struct GbdtParams {
  int n_trees = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  double lambda = 1.0;            // L2 on leaf weights
  double min_child_weight = 1.0;  // samples per child (unit hessians)
};

struct TreeEnsemble {
  double base_score = 0.0;
  double learning_rate = 0.1;
  std::vector<RegressionTree> trees;

  /// base_score + learning_rate * (sum of leaf values in tree order).
  double predict(const std::vector<double>& x) const;
  friend bool operator==(const TreeEnsemble&, const TreeEnsemble&) = default;
};

/// Column-major training matrix: columns[f][i].
struct TrainMatrix {
  std::vector<std::vector<double>> columns;
  std::size_t rows() const { return columns.empty() ? 0 : columns[0].size(); }
};

/// Squared-error gradient boosting with exact greedy splits, grown level by
/// level. `on_tree(t, tree)` fires after each tree, for staged evaluation.
TreeEnsemble fit_gbdt(const TrainMatrix& x, const std::vector<double>& y, const GbdtParams& params,
                      const std::function<void(std::size_t, const RegressionTree&)>& on_tree = {});

nlohmann::json to_json(const RegressionTree& t);
RegressionTree tree_from_json(const nlohmann::json& j);

}  // namespace dive
